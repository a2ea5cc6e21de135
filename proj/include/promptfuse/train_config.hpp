#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "promptfuse/config.hpp"
#include "promptfuse/error.hpp"
#include "promptfuse/manifest.hpp"
#include "promptfuse/sha256.hpp"

namespace promptfuse {

enum class OptimizerKind { adam };

NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::adam, "adam"}})

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, beta1, beta2, epsilon)

/// Training hyperparameters. Text and video are always on; audio is toggled
/// through `model.audio_enabled`.
struct TrainConfig {
    int frames = 16;
    int epochs = 20;
    double learning_rate = 8e-5;
    int batch_size = 8;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    AdamConfig adam{};
    double test_fraction = 0.2;
    std::optional<FewShotSpec> few_shot;
    bool eval_each_epoch = true;
    ModelConfig model{};

    void validate() const {
        if (frames < 1) throw ValidationError("frames must be >= 1");
        if (epochs < 0) throw ValidationError("epochs must be >= 0");
        if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
        if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
        if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ValidationError("test_fraction must lie in [0, 1]");
        model.validate();
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"frames", c.frames},
                       {"epochs", c.epochs},
                       {"learning_rate", c.learning_rate},
                       {"batch_size", c.batch_size},
                       {"seed", c.seed},
                       {"optimizer", c.optimizer},
                       {"adam", c.adam},
                       {"test_fraction", c.test_fraction},
                       {"few_shot_k", c.few_shot ? nlohmann::json(c.few_shot->k) : nlohmann::json()},
                       {"few_shot_seed", c.few_shot ? nlohmann::json(c.few_shot->seed) : nlohmann::json()},
                       {"eval_each_epoch", c.eval_each_epoch},
                       {"model", c.model}};
}

/// Keys absent from `j` keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    check_known_keys(j, nlohmann::json(TrainConfig{}));
    const TrainConfig d{};
    c.frames = j.value("frames", d.frames);
    c.epochs = j.value("epochs", d.epochs);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
    c.optimizer = j.value("optimizer", d.optimizer);
    c.adam = j.value("adam", d.adam);
    c.test_fraction = j.value("test_fraction", d.test_fraction);
    c.eval_each_epoch = j.value("eval_each_epoch", d.eval_each_epoch);
    c.model = j.value("model", d.model);
    c.few_shot.reset();
    if (auto it = j.find("few_shot_k"); it != j.end() && !it->is_null()) {
        FewShotSpec fs;
        fs.k = it->get<std::size_t>();
        auto s = j.find("few_shot_seed");
        fs.seed = (s != j.end() && !s->is_null()) ? s->get<std::uint64_t>() : c.seed;
        c.few_shot = fs;
    }
}

/// First 16 hex digits of SHA-256 over the canonical JSON of the config.
inline std::string config_fingerprint(const TrainConfig& c) {
    return sha256_hex(nlohmann::json(c).dump()).substr(0, 16);
}

}  // namespace promptfuse
