#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptfuse/audio.hpp"
#include "promptfuse/error.hpp"

namespace promptfuse {

/// Output width of the text and vision encoders.
inline constexpr int kEmbedDim = 512;
/// Output width of the audio encoder (input width of the audio projection).
inline constexpr int kAudioEmbedDim = 1024;

/// Backbone shapes. Text and vision transformers share width/depth/heads.
struct EncoderConfig {
    int width = 64;
    int layers = 12;
    int heads = 4;
    int mlp_ratio = 4;
    int image_size = 32;
    int patch_size = 8;
    int vocab_size = 512;
    int max_text_len = 16;
    std::vector<int> audio_channels{8, 16, 32, 64};
    AudioConfig audio{};

    int patches_per_frame() const noexcept {
        const int side = image_size / patch_size;
        return side * side;
    }
    int patch_dim() const noexcept { return 3 * patch_size * patch_size; }

    void validate() const {
        if (width <= 0 || layers <= 0 || heads <= 0 || mlp_ratio <= 0)
            throw ValidationError("encoder: width, layers, heads and mlp_ratio must be positive");
        if (width % heads != 0) throw ValidationError("encoder: width must be divisible by heads");
        if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0)
            throw ValidationError("encoder: image_size must be a positive multiple of patch_size");
        if (vocab_size < 8) throw ValidationError("encoder: vocab_size must be at least 8");
        if (max_text_len < 3) throw ValidationError("encoder: max_text_len must be at least 3");
        if (audio_channels.empty()) throw ValidationError("encoder: audio_channels must be non-empty");
        for (int c : audio_channels)
            if (c <= 0) throw ValidationError("encoder: audio channel widths must be positive");
        audio.spectrogram.validate();
        if (audio.sample_rate <= 0 || !(audio.clip_seconds > 0.0))
            throw ValidationError("encoder: audio sample_rate and clip_seconds must be positive");
    }
};

/// Deep-prompt settings per branch. A branch with depth 0 or `enabled_*`
/// false has no prompt tokens at all. `frozen_*` keeps the tokens but moves
/// them to the frozen partition.
struct PromptConfig {
    int text_tokens = 12;
    int video_tokens = 12;
    int text_depth = 12;
    int video_depth = 12;
    bool enabled_text = true;
    bool enabled_video = true;
    bool frozen_text = false;
    bool frozen_video = false;

    int active_text_tokens() const noexcept { return enabled_text && text_depth > 0 ? text_tokens : 0; }
    int active_video_tokens() const noexcept { return enabled_video && video_depth > 0 ? video_tokens : 0; }

    void validate(int encoder_layers) const {
        if (text_depth < 0 || video_depth < 0) throw ValidationError("prompt: depth must be non-negative");
        if (text_depth > encoder_layers || video_depth > encoder_layers)
            throw ValidationError("prompt: depth exceeds encoder layer count (" + std::to_string(encoder_layers) + ")");
        if (enabled_text && text_tokens < 1) throw ValidationError("prompt: text_tokens must be >= 1 when enabled");
        if (enabled_video && video_tokens < 1) throw ValidationError("prompt: video_tokens must be >= 1 when enabled");
    }
};

enum class FusionNorm { after_sum, before_and_after };

/// Initialisation of the frozen transformer matrices (qkv, attention output,
/// MLP). `fan_in` draws N(0, 1/fan_in); `normal` draws N(0, 0.02).
enum class BackboneInit { fan_in, normal };

NLOHMANN_JSON_SERIALIZE_ENUM(FusionNorm, {{FusionNorm::after_sum, "after_sum"},
                                          {FusionNorm::before_and_after, "before_and_after"}})
NLOHMANN_JSON_SERIALIZE_ENUM(BackboneInit, {{BackboneInit::fan_in, "fan_in"}, {BackboneInit::normal, "normal"}})

/// Everything needed to construct a model.
struct ModelConfig {
    EncoderConfig encoder{};
    PromptConfig prompt{};
    bool audio_enabled = true;
    FusionNorm fusion_norm = FusionNorm::after_sum;
    BackboneInit backbone_init = BackboneInit::fan_in;
    double logit_scale_init = std::log(1.0 / 0.07);
    double logit_scale_max = 100.0;

    void validate() const {
        encoder.validate();
        prompt.validate(encoder.layers);
        if (!(logit_scale_max > 0.0)) throw ValidationError("logit_scale_max must be positive");
    }
};

NLOHMANN_JSON_SERIALIZE_ENUM(WindowKind, {{WindowKind::hann, "hann"}})
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SpectrogramConfig, n_fft, hop, window, log_floor, center_pad)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AudioConfig, sample_rate, clip_seconds, spectrogram)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, width, layers, heads, mlp_ratio, image_size, patch_size,
                                                vocab_size, max_text_len, audio_channels, audio)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PromptConfig, text_tokens, video_tokens, text_depth, video_depth,
                                                enabled_text, enabled_video, frozen_text, frozen_video)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, encoder, prompt, audio_enabled, fusion_norm,
                                                backbone_init, logit_scale_init, logit_scale_max)

/// Rejects keys in `given` that do not exist in `reference` (recursively).
inline void check_known_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& where = "") {
    if (!given.is_object() || !reference.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        auto it = reference.find(key);
        if (it == reference.end()) throw ValidationError("unknown config key \"" + where + key + "\"");
        check_known_keys(value, *it, where + key + ".");
    }
}

}  // namespace promptfuse
