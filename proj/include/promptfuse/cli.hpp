#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "promptfuse/ablation.hpp"
#include "promptfuse/audio.hpp"
#include "promptfuse/checkpoint.hpp"
#include "promptfuse/gradcheck.hpp"
#include "promptfuse/manifest.hpp"
#include "promptfuse/train.hpp"

namespace promptfuse::cli {

namespace fs = std::filesystem;

/// TrainConfig overrides shared by train, ablate and gradcheck. Precedence:
/// flag > --config file > built-in default.
struct ConfigFlags {
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, frames, batch_size, text_tokens, video_tokens, text_depth, video_depth;
    std::optional<double> lr, test_fraction;
    bool no_audio = false, no_text_prompts = false, no_video_prompts = false;
    bool freeze_text_prompts = false, freeze_video_prompts = false;

    void attach(CLI::App& app) {
        app.add_option("--config", config_path, "JSON TrainConfig; flags override its values");
        app.add_option("--seed", seed, "Seed for initialisation, splits, shuffling and sampling (default 0)");
        app.add_option("--epochs", epochs, "Training epochs (default 20)")->check(CLI::NonNegativeNumber);
        app.add_option("--lr", lr, "Adam learning rate (default 8e-5)")->check(CLI::PositiveNumber);
        app.add_option("--frames", frames, "Frames sampled per video (default 16)")->check(CLI::PositiveNumber);
        app.add_option("--batch-size", batch_size, "Mini-batch size (default 8)")->check(CLI::PositiveNumber);
        app.add_option("--test-fraction", test_fraction, "Test share per class for untagged manifests (default 0.2)")
            ->check(CLI::Range(0.0, 1.0));
        app.add_option("--text-tokens", text_tokens, "Prompt tokens per text layer (default 12)");
        app.add_option("--video-tokens", video_tokens, "Prompt tokens per vision layer (default 12)");
        app.add_option("--text-depth", text_depth, "Prompted text layers (default 12)");
        app.add_option("--video-depth", video_depth, "Prompted vision layers (default 12)");
        app.add_flag("--no-audio", no_audio, "Disable the audio branch and its projection");
        app.add_flag("--no-text-prompts", no_text_prompts, "Remove text prompt tokens");
        app.add_flag("--no-video-prompts", no_video_prompts, "Remove video prompt tokens");
        app.add_flag("--freeze-text-prompts", freeze_text_prompts, "Keep text prompts but exclude them from training");
        app.add_flag("--freeze-video-prompts", freeze_video_prompts, "Keep video prompts but exclude them from training");
    }

    TrainConfig resolve() const {
        TrainConfig c;
        if (config_path) c = read_config(*config_path);
        if (seed) c.seed = *seed;
        if (epochs) c.epochs = *epochs;
        if (lr) c.learning_rate = *lr;
        if (frames) c.frames = *frames;
        if (batch_size) c.batch_size = *batch_size;
        if (test_fraction) c.test_fraction = *test_fraction;
        auto& p = c.model.prompt;
        if (text_tokens) p.text_tokens = *text_tokens;
        if (video_tokens) p.video_tokens = *video_tokens;
        if (text_depth) p.text_depth = *text_depth;
        if (video_depth) p.video_depth = *video_depth;
        if (no_audio) c.model.audio_enabled = false;
        if (no_text_prompts) p.enabled_text = false;
        if (no_video_prompts) p.enabled_video = false;
        if (freeze_text_prompts) p.frozen_text = true;
        if (freeze_video_prompts) p.frozen_video = true;
        c.validate();
        return c;
    }

    static TrainConfig read_config(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config " + path.string());
        try {
            return nlohmann::json::parse(in).get<TrainConfig>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("config " + path.string() + ": " + e.what());
        }
    }
};

inline void print_counts(std::ostream& os, const ClassCounts& counts) {
    std::size_t total = 0;
    for (const auto& [label, n] : counts) {
        os << to_string(label) << ": " << n << '\n';
        total += n;
    }
    os << "total: " << total << '\n';
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write error on " + path.string());
}

inline void check_files(const std::vector<ManifestEntry>& entries) {
    for (const auto& e : entries) {
        if (list_frames(e.frames_dir).empty()) throw DataError(e.id + ": no frame images in " + e.frames_dir.string());
        if (!fs::is_regular_file(e.audio_path)) throw IoError(e.id + ": audio file not found: " + e.audio_path.string());
    }
}

inline std::string spectrogram_csv(const Spectrogram& s) {
    std::string out;
    char buf[32];
    for (Eigen::Index r = 0; r < s.values.rows(); ++r) {
        for (Eigen::Index c = 0; c < s.values.cols(); ++c) {
            std::snprintf(buf, sizeof buf, c ? ",%.9g" : "%.9g", s.values(r, c));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

/// Entry point of the `promptfuse` tool. Returns the process exit code:
/// 0 success, 1 usage or validation error, 2 I/O error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Prompt-tuned multimodal (text/video/audio) video classifier"};
    app.name("promptfuse");
    app.require_subcommand(1, 1);

    std::string manifest_path, out_path, checkpoint_path, audio_path, split_name = "test", axis_name, off_mode = "removed";
    std::uint64_t seed = 0;
    std::size_t k = 0;
    double test_fraction = 0.2, epsilon = 1e-3, tolerance = 1e-3;
    bool do_check_files = false, fixed_clip = false;
    int n_fft = 1024, hop = 512;

    auto* validate = app.add_subcommand("validate-manifest", "Parse a manifest and print class counts");
    validate->add_option("--manifest", manifest_path, "JSON-lines manifest")->required();
    validate->add_flag("--check-files", do_check_files, "Also require frame images and audio files to exist");

    auto* split = app.add_subcommand("split", "Write a copy of the manifest with stratified train/test tags");
    split->add_option("--manifest", manifest_path, "JSON-lines manifest")->required();
    split->add_option("--out", out_path, "Output manifest path")->required();
    split->add_option("--seed", seed, "Split seed (default 0)");
    split->add_option("--test-fraction", test_fraction, "Test share per class (default 0.2)")->check(CLI::Range(0.0, 1.0));

    auto* spec = app.add_subcommand("spectrogram", "Dump a log-power spectrogram as CSV (rows = frequency bins)");
    spec->add_option("--audio", audio_path, "WAV file (PCM16 or float32)")->required();
    spec->add_option("--out", out_path, "Output CSV path")->required();
    spec->add_option("--n-fft", n_fft, "FFT size, power of two (default 1024)");
    spec->add_option("--hop", hop, "Hop length in samples (default 512)");
    spec->add_flag("--fixed-clip", fixed_clip, "Resample to 44.1 kHz and fit to 5 s first, as the model input does");

    ConfigFlags train_flags, ablate_flags, grad_flags;
    std::optional<std::size_t> train_k;
    auto* train_cmd = app.add_subcommand("train", "Train prompts, audio projection and logit scale");
    train_cmd->add_option("--manifest", manifest_path, "JSON-lines manifest")->required();
    train_cmd->add_option("--out", out_path, "Output directory (checkpoint.bin, metrics.csv, config.json)")->required();
    train_cmd->add_option("--k", train_k, "Few-shot: train on k samples per class (k >= 1)");
    train_flags.attach(*train_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint written by train")->required();
    eval_cmd->add_option("--manifest", manifest_path, "JSON-lines manifest")->required();
    eval_cmd->add_option("--split", split_name, "train or test (default test)")->check(CLI::IsMember({"train", "test"}));
    eval_cmd->add_option("--out", out_path, "Optional metrics CSV path");

    auto* ablate_cmd = app.add_subcommand("ablate", "Run one ablation axis and write a CSV table");
    ablate_cmd->add_option("--axis", axis_name, "modality | tokens | depth | fewshot")
        ->required()
        ->check(CLI::IsMember({"modality", "tokens", "depth", "fewshot"}));
    ablate_cmd->add_option("--manifest", manifest_path, "JSON-lines manifest")->required();
    ablate_cmd->add_option("--out", out_path, "Output CSV path")->required();
    ablate_cmd->add_option("--prompt-off-mode", off_mode, "Modality axis: non-learnable prompts are removed or frozen")
        ->check(CLI::IsMember({"removed", "frozen"}));
    ablate_flags.attach(*ablate_cmd);

    auto* fewshot = app.add_subcommand("fewshot", "Write a k-per-class subset of the train entries");
    fewshot->add_option("--manifest", manifest_path, "JSON-lines manifest")->required();
    fewshot->add_option("--out", out_path, "Output manifest path")->required();
    fewshot->add_option("--k", k, "Samples per class")->required();
    fewshot->add_option("--seed", seed, "Sampling seed (default 0)");

    auto* grad = app.add_subcommand("gradcheck", "Compare analytic and central-difference gradients (double precision)");
    grad->add_option("--epsilon", epsilon, "Central-difference step (default 1e-3)")->check(CLI::PositiveNumber);
    grad->add_option("--tolerance", tolerance, "Maximum accepted relative error (default 1e-3)");
    grad_flags.attach(*grad);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*validate) {
            const auto entries = load_manifest(manifest_path);
            if (do_check_files) check_files(entries);
            print_counts(out, class_distribution(entries));
        } else if (*split) {
            const auto entries = load_manifest(manifest_path);
            auto [train_split, test_split] = make_splits(entries, test_fraction, seed);
            auto all = std::move(train_split.entries);
            all.insert(all.end(), test_split.entries.begin(), test_split.entries.end());
            save_manifest(all, out_path);
            out << "train:\n";
            print_counts(out, train_split.class_counts);
            out << "test:\n";
            print_counts(out, test_split.class_counts);
        } else if (*spec) {
            const auto wave = load_wav(audio_path);
            Spectrogram s;
            if (fixed_clip) {
                AudioConfig a;
                a.spectrogram.n_fft = n_fft;
                a.spectrogram.hop = hop;
                a.spectrogram.validate();
                s = audio_to_spectrogram(wave, a);
            } else {
                SpectrogramConfig c;
                c.n_fft = n_fft;
                c.hop = hop;
                c.validate();
                s = log_spectrogram(wave, c);
            }
            write_text(out_path, spectrogram_csv(s));
            out << s.freq_bins() << " x " << s.time_frames() << '\n';
        } else if (*train_cmd) {
            auto cfg = train_flags.resolve();
            if (train_k) cfg.few_shot = FewShotSpec{*train_k, cfg.seed};
            const auto entries = load_manifest(manifest_path);
            const auto result = train(cfg, entries, [&](const MetricsRecord& r) { err << metrics_csv_row(r) << '\n'; });
            const fs::path dir = out_path;
            save_checkpoint(result.model, result.meta(cfg), dir / "checkpoint.bin");
            write_metrics_csv(result.metrics, dir / "metrics.csv");
            write_text(dir / "config.json", nlohmann::json(cfg).dump(2) + "\n");
            const bool frozen_ok = std::all_of(result.frozen_hashes.begin(), result.frozen_hashes.end(),
                                               [&](const auto& h) { return h == result.frozen_hashes.front(); });
            if (!frozen_ok) throw ValidationError("frozen parameters changed during training");
            out << "trainable_params: " << result.model.params().element_count(true) << '\n'
                << "frozen_sha256: " << result.frozen_hashes.front() << '\n'
                << "final: " << metrics_csv_row(result.metrics.back()) << '\n';
        } else if (*eval_cmd) {
            const auto entries = load_manifest(manifest_path);
            const auto rec = evaluate(fs::path(checkpoint_path), entries, split_name == "train" ? Split::train : Split::test);
            if (!out_path.empty()) write_metrics_csv({rec}, out_path);
            out << kMetricsHeader << '\n' << metrics_csv_row(rec) << '\n';
        } else if (*ablate_cmd) {
            const auto base = ablate_flags.resolve();
            const auto entries = load_manifest(manifest_path);
            const auto grid = make_grid(*parse_axis(axis_name), base,
                                        off_mode == "frozen" ? PromptOffMode::frozen : PromptOffMode::removed);
            const auto rows = ablate(grid, entries, [&](const AblationRow& r) {
                for (const auto& [name, value] : r.point.columns) err << name << '=' << value << ' ';
                err << "accuracy=" << r.metrics.accuracy << '\n';
            });
            write_ablation_csv(rows, out_path);
            out << rows.size() << " rows written to " << out_path << '\n';
        } else if (*fewshot) {
            const auto entries = load_manifest(manifest_path);
            std::vector<ManifestEntry> pool;
            for (const auto& e : entries)
                if (!e.split || *e.split == Split::train) pool.push_back(e);
            const auto subset = few_shot_sample(make_split(pool), FewShotSpec{k, seed});
            save_manifest(subset.entries, out_path);
            print_counts(out, subset.class_counts);
        } else if (*grad) {
            auto cfg = gradcheck_toy_config();
            if (grad_flags.config_path) cfg = ConfigFlags::read_config(*grad_flags.config_path).model;
            auto& p = cfg.prompt;
            if (grad_flags.text_tokens) p.text_tokens = *grad_flags.text_tokens;
            if (grad_flags.video_tokens) p.video_tokens = *grad_flags.video_tokens;
            if (grad_flags.text_depth) p.text_depth = *grad_flags.text_depth;
            if (grad_flags.video_depth) p.video_depth = *grad_flags.video_depth;
            if (grad_flags.no_audio) cfg.audio_enabled = false;
            if (grad_flags.no_text_prompts) p.enabled_text = false;
            if (grad_flags.no_video_prompts) p.enabled_video = false;
            if (grad_flags.freeze_text_prompts) p.frozen_text = true;
            if (grad_flags.freeze_video_prompts) p.frozen_video = true;
            GradcheckOptions opt;
            opt.epsilon = epsilon;
            if (grad_flags.seed) opt.seed = *grad_flags.seed;
            if (grad_flags.frames) opt.frames = *grad_flags.frames;
            if (grad_flags.batch_size) opt.batch = *grad_flags.batch_size;
            const auto r = gradient_check(cfg, opt);
            for (const auto& pe : r.per_parameter)
                out << pe.name << " elements=" << pe.elements << " max_rel_error=" << pe.max_rel_error << '\n';
            out << "checked_elements: " << r.checked_elements << '\n'
                << "max_rel_error: " << r.max_rel_error << " (" << r.worst_parameter << ")\n";
            if (!r.frozen_with_gradient.empty()) {
                err << "frozen parameter received a gradient: " << r.frozen_with_gradient.front() << '\n';
                return 1;
            }
            if (!(r.max_rel_error < tolerance)) {
                err << "gradient check failed: " << r.max_rel_error << " >= " << tolerance << '\n';
                return 1;
            }
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace promptfuse::cli
