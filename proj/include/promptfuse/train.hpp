#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "promptfuse/audio.hpp"
#include "promptfuse/checkpoint.hpp"
#include "promptfuse/image.hpp"
#include "promptfuse/manifest.hpp"
#include "promptfuse/model.hpp"
#include "promptfuse/parallel.hpp"
#include "promptfuse/train_config.hpp"

namespace promptfuse {

/// Training runs in single precision; gradient checks use double.
using Real = float;
using Model = MultimodalModel<Real>;

struct MetricsRecord {
    int epoch = 0;
    Split split = Split::train;
    double loss = 0.0;
    double accuracy = 0.0;  // percent
    std::size_t trainable_param_count = 0;
    std::string config_fingerprint;
};

// ---- frames -----------------------------------------------------------------

/// Uniformly spaced indices floor(i * N / T) into N available frames; repeats
/// when N < T.
inline std::vector<std::size_t> frame_indices(std::size_t available, std::size_t count) {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i * available / count;
    return idx;
}

inline std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("frames directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && is_frame_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

/// T frames, each resized to image_size and normalised to (x - 0.5) / 0.5.
/// Returns T x (3 * image_size^2), planar per row.
inline Matrix<Real> sample_frames(const ManifestEntry& entry, int frames, int image_size) {
    const auto files = list_frames(entry.frames_dir);
    if (files.empty()) throw DataError("no frame images in " + entry.frames_dir.string() + " (sample " + entry.id + ")");
    const auto idx = frame_indices(files.size(), static_cast<std::size_t>(frames));
    Matrix<Real> out(frames, 3 * image_size * image_size);
    for (int t = 0; t < frames; ++t) {
        const auto planar = resize_to_planar(load_image(files[idx[static_cast<std::size_t>(t)]]), image_size);
        for (std::size_t k = 0; k < planar.size(); ++k)
            out(t, static_cast<Eigen::Index>(k)) = (planar[k] - Real(0.5)) / Real(0.5);
    }
    return out;
}

// ---- sample preparation -----------------------------------------------------

/// Decoded frames plus the frozen audio embedding for one manifest entry.
struct PreparedSample {
    Matrix<Real> frames;
    RowVector<Real> audio;  // empty when audio is disabled
    int label = 0;
};

/// Decodes frames and audio for every entry. Each entry is independent, so
/// the worker pool does not change results.
inline std::vector<PreparedSample> prepare_samples(const Model& model, const std::vector<ManifestEntry>& entries,
                                                   int frames) {
    const auto& cfg = model.config();
    std::vector<PreparedSample> out(entries.size());
    parallel_for(entries.size(), [&](std::size_t i) {
        const auto& e = entries[i];
        auto& s = out[i];
        s.label = static_cast<int>(e.label);
        s.frames = sample_frames(e, frames, cfg.encoder.image_size);
        if (cfg.audio_enabled)
            s.audio = model.encode_spectrogram(audio_to_spectrogram(load_wav(e.audio_path), cfg.encoder.audio));
    });
    return out;
}

inline Batch<Real> make_batch(const std::vector<PreparedSample>& samples, std::span<const std::size_t> order,
                              int frames, bool audio) {
    Batch<Real> b;
    b.frames_per_video = frames;
    const auto n = static_cast<Eigen::Index>(order.size());
    b.frames.resize(n * frames, samples[order[0]].frames.cols());
    if (audio) b.audio.resize(n, kAudioEmbedDim);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = samples[order[static_cast<std::size_t>(i)]];
        b.frames.middleRows(i * frames, frames) = s.frames;
        if (audio) b.audio.row(i) = s.audio;
        b.labels.push_back(s.label);
    }
    return b;
}

// ---- evaluation -------------------------------------------------------------

struct EvalOutcome {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<int> predictions;
};

/// Forward-only pass in batches; no parameter is touched.
inline EvalOutcome evaluate_samples(Model& model, const std::vector<PreparedSample>& samples, int frames,
                                    int batch_size) {
    if (samples.empty()) throw DataError("evaluate: empty split");
    const auto names = class_names();
    EvalOutcome out;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
        const auto stop = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
        const auto idx = std::span(order).subspan(start, stop - start);
        const auto batch = make_batch(samples, idx, frames, model.config().audio_enabled);
        Tape<Real> t;
        Model::Binder bind(t, model.params(), false);
        const auto logits = model.forward(t, bind, batch, names);
        SimilarityMatrix<Real> sim{t.value(logits), model.logit_scale()};
        loss_sum += static_cast<double>(contrastive_loss(sim, std::span<const int>(batch.labels))) * idx.size();
        for (std::size_t i = 0; auto p : predict(sim)) {
            out.predictions.push_back(p);
            correct += p == batch.labels[i++];
        }
    }
    out.loss = loss_sum / static_cast<double>(samples.size());
    out.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(samples.size());
    return out;
}

// ---- optimiser --------------------------------------------------------------

/// Adam restricted to the trainable partition.
class AdamOptimizer {
public:
    AdamOptimizer(const ParameterStore<Real>& store, double lr, AdamConfig cfg) : lr_(lr), cfg_(cfg) {
        for (std::size_t i = 0; i < store.size(); ++i)
            if (store[i].trainable) {
                ids_.push_back(i);
                m_.push_back(Matrix<Real>::Zero(store[i].value.rows(), store[i].value.cols()));
                v_.push_back(m_.back());
            }
    }

    void step(ParameterStore<Real>& store) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
        const auto b1 = static_cast<Real>(cfg_.beta1), b2 = static_cast<Real>(cfg_.beta2);
        for (std::size_t k = 0; k < ids_.size(); ++k) {
            auto& p = store[ids_[k]];
            if (p.grad.size() == 0) p.grad = Matrix<Real>::Zero(p.value.rows(), p.value.cols());
            m_[k] = b1 * m_[k] + (Real(1) - b1) * p.grad;
            v_[k] = b2 * v_[k] + (Real(1) - b2) * p.grad.cwiseAbs2();
            p.value.array() -= static_cast<Real>(lr_) * (m_[k].array() / static_cast<Real>(c1)) /
                               ((v_[k].array() / static_cast<Real>(c2)).sqrt() + static_cast<Real>(cfg_.epsilon));
        }
    }

private:
    double lr_;
    AdamConfig cfg_;
    int t_ = 0;
    std::vector<ParamId> ids_;
    std::vector<Matrix<Real>> m_, v_;
};

// ---- training ---------------------------------------------------------------

struct TrainResult {
    Model model;
    std::vector<MetricsRecord> metrics;
    /// Frozen-parameter hash before training and after every epoch.
    std::vector<std::string> frozen_hashes;
    int epochs_completed = 0;

    CheckpointMeta meta(const TrainConfig& cfg) const { return {cfg, epochs_completed}; }
};

struct TrainData {
    DatasetSplit train;
    DatasetSplit test;
};

/// Resolves the train/test splits and applies the few-shot subset if any.
inline TrainData resolve_train_data(const TrainConfig& cfg, const std::vector<ManifestEntry>& manifest) {
    auto [train, test] = resolve_splits(manifest, cfg.test_fraction, cfg.seed);
    if (cfg.few_shot) train = few_shot_sample(train, *cfg.few_shot);
    return {std::move(train), std::move(test)};
}

using EpochCallback = std::function<void(const MetricsRecord&)>;

inline TrainResult train(const TrainConfig& cfg, const std::vector<ManifestEntry>& manifest,
                         const EpochCallback& on_record = {}) {
    cfg.validate();
    if (cfg.few_shot && cfg.few_shot->k == 0)
        throw ValidationError("few-shot k = 0 is zero-shot: evaluate only, nothing to train");
    const auto data = resolve_train_data(cfg, manifest);
    if (data.train.empty()) throw DataError("train split is empty");

    TrainResult result{Model(cfg.model, cfg.seed), {}, {}, 0};
    Model& model = result.model;
    const auto fingerprint = config_fingerprint(cfg);
    const auto trainable = model.params().element_count(true);
    const auto emit = [&](int epoch, Split split, double loss, double acc) {
        MetricsRecord r{epoch, split, loss, acc, trainable, fingerprint};
        result.metrics.push_back(r);
        if (on_record) on_record(r);
    };

    const auto train_samples = prepare_samples(model, data.train.entries, cfg.frames);
    const auto test_samples = prepare_samples(model, data.test.entries, cfg.frames);
    const auto evaluate_all = [&](int epoch, bool include_train) {
        if (include_train) {
            const auto r = evaluate_samples(model, train_samples, cfg.frames, cfg.batch_size);
            emit(epoch, Split::train, r.loss, r.accuracy);
        }
        if (!test_samples.empty() && (cfg.eval_each_epoch || epoch == 0 || epoch == cfg.epochs)) {
            const auto r = evaluate_samples(model, test_samples, cfg.frames, cfg.batch_size);
            emit(epoch, Split::test, r.loss, r.accuracy);
        }
    };

    result.frozen_hashes.push_back(frozen_parameter_hash(model.params()));
    evaluate_all(0, true);

    AdamOptimizer optimizer(model.params(), cfg.learning_rate, cfg.adam);
    auto rng = derive_rng(cfg.seed, "train.shuffle");
    const auto names = class_names();
    std::vector<std::size_t> order(train_samples.size());
    std::iota(order.begin(), order.end(), 0);
    const Real max_log = static_cast<Real>(model.max_log_scale());

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle(order, rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const auto stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const auto idx = std::span<const std::size_t>(order).subspan(start, stop - start);
            const auto batch = make_batch(train_samples, idx, cfg.frames, cfg.model.audio_enabled);

            model.params().zero_grad();
            Tape<Real> t;
            Model::Binder bind(t, model.params(), true);
            const auto logits = model.forward(t, bind, batch, names);
            const auto loss = t.cross_entropy(logits, batch.labels);
            const double batch_loss = t.value(loss)(0, 0);
            if (!std::isfinite(batch_loss)) throw ValidationError("non-finite loss at epoch " + std::to_string(epoch));
            SimilarityMatrix<Real> sim{t.value(logits), model.logit_scale()};
            for (std::size_t i = 0; auto p : predict(sim)) correct += p == batch.labels[i++];
            loss_sum += batch_loss * static_cast<double>(idx.size());

            t.backward(loss);
            optimizer.step(model.params());
            auto& ls = model.params()[model.logit_scale_id()].value;
            ls(0, 0) = std::min(ls(0, 0), max_log);
        }
        model.params().zero_grad();
        result.epochs_completed = epoch;
        emit(epoch, Split::train, loss_sum / static_cast<double>(order.size()),
             100.0 * static_cast<double>(correct) / static_cast<double>(order.size()));
        evaluate_all(epoch, false);
        result.frozen_hashes.push_back(frozen_parameter_hash(model.params()));
    }
    return result;
}

/// Accuracy of `model` on one split of `manifest`, using the split rule of `cfg`.
inline MetricsRecord evaluate(Model& model, const TrainConfig& cfg, const std::vector<ManifestEntry>& manifest,
                              Split split, int epoch = 0) {
    const auto [train_split, test_split] = resolve_splits(manifest, cfg.test_fraction, cfg.seed);
    const auto& entries = split == Split::train ? train_split.entries : test_split.entries;
    if (entries.empty()) throw DataError(std::string("evaluate: ") + std::string(to_string(split)) + " split is empty");
    const auto samples = prepare_samples(model, entries, cfg.frames);
    const auto r = evaluate_samples(model, samples, cfg.frames, cfg.batch_size);
    return {epoch, split, r.loss, r.accuracy, model.params().element_count(true), config_fingerprint(cfg)};
}

inline MetricsRecord evaluate(const std::filesystem::path& checkpoint, const std::vector<ManifestEntry>& manifest,
                              Split split) {
    auto loaded = load_checkpoint<Real>(checkpoint);
    return evaluate(loaded.model, loaded.meta.config, manifest, split, loaded.meta.epochs_completed);
}

// ---- metrics CSV ------------------------------------------------------------

inline constexpr const char* kMetricsHeader = "epoch,split,loss,accuracy,trainable_params,fingerprint";

inline std::string format_number(double v, const char* fmt) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

inline std::string metrics_csv_row(const MetricsRecord& r) {
    return std::to_string(r.epoch) + "," + std::string(to_string(r.split)) + "," + format_number(r.loss, "%.8g") + "," +
           format_number(r.accuracy, "%.4f") + "," + std::to_string(r.trainable_param_count) + "," + r.config_fingerprint;
}

inline void write_metrics_csv(const std::vector<MetricsRecord>& records, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << kMetricsHeader << '\n';
    for (const auto& r : records) out << metrics_csv_row(r) << '\n';
    if (!out) throw IoError("write error on " + path.string());
}

}  // namespace promptfuse
