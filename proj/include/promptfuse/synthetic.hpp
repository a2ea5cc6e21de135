#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "promptfuse/audio.hpp"
#include "promptfuse/image.hpp"
#include "promptfuse/manifest.hpp"
#include "promptfuse/rng.hpp"

namespace promptfuse {

/// Where the class signal lives in a generated dataset.
enum class SyntheticKind {
    /// Frames are class-independent noise; audio is a class-specific tone.
    audio_separable,
    /// Frames carry a class-specific colour pattern; audio is class-independent.
    visual_separable,
};

struct SyntheticOptions {
    std::size_t train_per_class = 100;
    std::size_t test_per_class = 50;
    int frames = 4;
    int image_size = 32;
    int sample_rate = 16000;
    double seconds = 1.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline Image noise_frame(int size, Xoshiro256& rng) {
    Image img{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size * 3)};
    for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

/// Class 0: warm horizontal stripes; class 1: cool checkerboard. Both jittered.
inline Image pattern_frame(int size, int label, Xoshiro256& rng) {
    Image img{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size * 3)};
    const int period = 2 + static_cast<int>(rng.below(3));
    const int phase = static_cast<int>(rng.below(static_cast<std::uint64_t>(period)));
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const bool on = label == 0 ? ((y + phase) / period) % 2 == 0 : (((x + phase) / period) + (y / period)) % 2 == 0;
            const double base[3] = {label == 0 ? 220.0 : 40.0, 90.0, label == 0 ? 40.0 : 220.0};
            for (int c = 0; c < 3; ++c) {
                const double v = base[c] * (on ? 1.0 : 0.45) + rng.normal(0.0, 12.0);
                img.rgb[(static_cast<std::size_t>(y) * size + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    return img;
}

/// Class 0: loud band-limited sawtooth (rich in harmonics); class 1: quiet
/// pure sine. Fundamental, phase and level are jittered per clip, plus a
/// faint noise floor.
inline Waveform class_tone(int label, const SyntheticOptions& o, Xoshiro256& rng) {
    Waveform w;
    w.sample_rate = o.sample_rate;
    w.samples.resize(static_cast<std::size_t>(std::llround(o.seconds * o.sample_rate)));
    const double f0 = rng.uniform(400.0, 1600.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double level = label == 0 ? rng.uniform(0.35, 0.45) : rng.uniform(0.08, 0.12);
    const double nyquist = 0.49 * o.sample_rate;
    for (std::size_t n = 0; n < w.samples.size(); ++n) {
        const double t = static_cast<double>(n) / o.sample_rate;
        double s = 0.0;
        if (label == 0) {
            for (int h = 1; h * f0 < nyquist; ++h) s += std::sin(2.0 * std::numbers::pi * h * f0 * t + h * phase) / h;
            s *= 0.6;
        } else {
            s = std::sin(2.0 * std::numbers::pi * f0 * t + phase);
        }
        w.samples[n] = std::clamp(level * s + rng.normal(0.0, 1e-3), -1.0, 1.0);
    }
    return w;
}

inline Waveform noise_audio(const SyntheticOptions& o, Xoshiro256& rng) {
    Waveform w;
    w.sample_rate = o.sample_rate;
    w.samples.resize(static_cast<std::size_t>(std::llround(o.seconds * o.sample_rate)));
    for (auto& s : w.samples) s = std::clamp(rng.normal(0.0, 0.05), -1.0, 1.0);
    return w;
}

}  // namespace detail

/// Writes `dir/<id>/frame_NNNN.ppm`, `dir/<id>/audio.wav` and
/// `dir/manifest.jsonl` with explicit split tags. Returns the entries.
inline std::vector<ManifestEntry> write_synthetic_dataset(const std::filesystem::path& dir, SyntheticKind kind,
                                                          const SyntheticOptions& o) {
    std::filesystem::create_directories(dir);
    auto rng = derive_rng(o.seed, kind == SyntheticKind::audio_separable ? "synthetic.audio" : "synthetic.visual");
    std::vector<ManifestEntry> entries;
    for (Split split : {Split::train, Split::test}) {
        const std::size_t per_class = split == Split::train ? o.train_per_class : o.test_per_class;
        for (std::size_t i = 0; i < per_class; ++i)
            for (Label label : kLabels) {
                ManifestEntry e;
                e.id = std::string(to_string(split)) + "_" + std::string(to_string(label)) + "_" + std::to_string(i);
                e.label = label;
                e.split = split;
                e.frames_dir = dir / e.id;
                e.audio_path = dir / e.id / "audio.wav";
                std::filesystem::create_directories(e.frames_dir);
                const int cls = static_cast<int>(label);
                for (int f = 0; f < o.frames; ++f) {
                    char name[32];
                    std::snprintf(name, sizeof name, "frame_%04d.ppm", f);
                    save_ppm(kind == SyntheticKind::audio_separable ? detail::noise_frame(o.image_size, rng)
                                                                     : detail::pattern_frame(o.image_size, cls, rng),
                             e.frames_dir / name);
                }
                save_wav_pcm16(kind == SyntheticKind::audio_separable ? detail::class_tone(cls, o, rng)
                                                                       : detail::noise_audio(o, rng),
                               e.audio_path);
                entries.push_back(std::move(e));
            }
    }
    save_manifest(entries, dir / "manifest.jsonl");
    return entries;
}

}  // namespace promptfuse
