#pragma once

#include "promptfuse/ablation.hpp"
#include "promptfuse/audio.hpp"
#include "promptfuse/checkpoint.hpp"
#include "promptfuse/config.hpp"
#include "promptfuse/encoders.hpp"
#include "promptfuse/error.hpp"
#include "promptfuse/fusion.hpp"
#include "promptfuse/gradcheck.hpp"
#include "promptfuse/image.hpp"
#include "promptfuse/manifest.hpp"
#include "promptfuse/model.hpp"
#include "promptfuse/params.hpp"
#include "promptfuse/rng.hpp"
#include "promptfuse/sha256.hpp"
#include "promptfuse/synthetic.hpp"
#include "promptfuse/tape.hpp"
#include "promptfuse/train.hpp"
#include "promptfuse/train_config.hpp"
