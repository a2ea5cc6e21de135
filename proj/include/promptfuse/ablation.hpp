#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "promptfuse/train.hpp"

namespace promptfuse {

enum class AblationAxis { modality, tokens, depth, fewshot };

inline std::optional<AblationAxis> parse_axis(std::string_view s) {
    if (s == "modality") return AblationAxis::modality;
    if (s == "tokens") return AblationAxis::tokens;
    if (s == "depth") return AblationAxis::depth;
    if (s == "fewshot") return AblationAxis::fewshot;
    return std::nullopt;
}

/// How a "not learnable" prompt branch is realised in the modality axis.
enum class PromptOffMode { removed, frozen };

/// One configuration of a sweep plus the column values that identify it.
struct AblationPoint {
    std::vector<std::pair<std::string, std::string>> columns;
    TrainConfig config;
    bool evaluate_only = false;
};

struct AblationGrid {
    AblationAxis axis = AblationAxis::tokens;
    std::vector<AblationPoint> points;
};

struct AblationRow {
    AblationPoint point;
    MetricsRecord metrics;
};

namespace detail {
inline std::string mark(bool b) { return b ? "1" : "0"; }
}  // namespace detail

/// The standard sweep for `axis`, each point derived from `base` by changing
/// only that axis.
inline AblationGrid make_grid(AblationAxis axis, const TrainConfig& base, PromptOffMode off = PromptOffMode::removed) {
    AblationGrid g{axis, {}};
    switch (axis) {
        case AblationAxis::modality: {
            // (audio, learnable text prompts, learnable video prompts); text and
            // video modalities are always present, the projection learns iff audio.
            constexpr std::array<std::array<bool, 3>, 4> rows{{{true, true, true},
                                                               {false, true, true},
                                                               {false, true, false},
                                                               {true, true, false}}};
            for (const auto& [audio, text, video] : rows) {
                AblationPoint p{{}, base, false};
                auto& m = p.config.model;
                m.audio_enabled = audio;
                m.prompt.enabled_text = text || off == PromptOffMode::frozen;
                m.prompt.frozen_text = !text && off == PromptOffMode::frozen;
                m.prompt.enabled_video = video || off == PromptOffMode::frozen;
                m.prompt.frozen_video = !video && off == PromptOffMode::frozen;
                p.columns = {{"modality_text", "1"},          {"modality_video", "1"},
                             {"modality_audio", detail::mark(audio)}, {"learn_text", detail::mark(text)},
                             {"learn_video", detail::mark(video)},    {"learn_audio", detail::mark(audio)}};
                g.points.push_back(std::move(p));
            }
            break;
        }
        case AblationAxis::tokens:
            for (int v : {10, 8, 6, 4}) {
                AblationPoint p{{}, base, false};
                p.config.model.prompt.text_tokens = 10;
                p.config.model.prompt.video_tokens = v;
                p.columns = {{"text_tokens", "10"}, {"video_tokens", std::to_string(v)}};
                g.points.push_back(std::move(p));
            }
            break;
        case AblationAxis::depth:
            for (int d : {12, 8, 4, 2}) {
                AblationPoint p{{}, base, false};
                p.config.model.prompt.text_depth = d;
                p.config.model.prompt.video_depth = d;
                p.columns = {{"text_depth", std::to_string(d)}, {"video_depth", std::to_string(d)}};
                g.points.push_back(std::move(p));
            }
            break;
        case AblationAxis::fewshot:
            for (std::size_t k : {0, 1, 2, 4, 8, 16}) {
                AblationPoint p{{}, base, k == 0};
                p.config.few_shot = FewShotSpec{k, base.few_shot ? base.few_shot->seed : base.seed};
                p.columns = {{"k", std::to_string(k)}};
                g.points.push_back(std::move(p));
            }
            break;
    }
    return g;
}

using AblationCallback = std::function<void(const AblationRow&)>;

/// Trains and evaluates every point with the base seed. The reported record is
/// the final-epoch test evaluation (train split when there is no test split).
/// Evaluate-only points score the untrained model.
inline std::vector<AblationRow> ablate(const AblationGrid& grid, const std::vector<ManifestEntry>& manifest,
                                       const AblationCallback& on_row = {}) {
    if (grid.points.empty()) throw ValidationError("ablation grid has no points");
    std::vector<AblationRow> rows;
    for (const auto& point : grid.points) {
        const auto& cfg = point.config;
        cfg.validate();
        MetricsRecord rec;
        if (point.evaluate_only) {
            Model model(cfg.model, cfg.seed);
            const auto [train_split, test_split] = resolve_splits(manifest, cfg.test_fraction, cfg.seed);
            rec = evaluate(model, cfg, manifest, test_split.empty() ? Split::train : Split::test);
        } else {
            const auto result = train(cfg, manifest);
            const auto& m = result.metrics;
            const auto last_test = std::find_if(m.rbegin(), m.rend(), [](const auto& r) { return r.split == Split::test; });
            rec = last_test != m.rend() ? *last_test : m.back();
        }
        rows.push_back({point, rec});
        if (on_row) on_row(rows.back());
    }
    return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
    if (rows.empty()) throw ValidationError("no ablation rows to write");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& [name, value] : rows.front().point.columns) out << name << ',';
    out << "accuracy,loss,epoch,trainable_params,fingerprint\n";
    for (const auto& r : rows) {
        for (const auto& [name, value] : r.point.columns) out << value << ',';
        out << format_number(r.metrics.accuracy, "%.4f") << ',' << format_number(r.metrics.loss, "%.8g") << ','
            << r.metrics.epoch << ',' << r.metrics.trainable_param_count << ',' << r.metrics.config_fingerprint << '\n';
    }
    if (!out) throw IoError("write error on " + path.string());
}

}  // namespace promptfuse
