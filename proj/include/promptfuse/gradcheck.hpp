#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "promptfuse/manifest.hpp"
#include "promptfuse/model.hpp"

namespace promptfuse {

/// Toy model used by the gradient check: width 8, 2 layers, 2 heads, 2 prompt
/// tokens at depth 2 in both branches, audio on, N(0, 0.02) backbone.
inline ModelConfig gradcheck_toy_config() {
    ModelConfig m;
    m.encoder.width = 8;
    m.encoder.layers = 2;
    m.encoder.heads = 2;
    m.encoder.mlp_ratio = 2;
    m.encoder.image_size = 8;
    m.encoder.patch_size = 4;
    m.encoder.vocab_size = 32;
    m.encoder.max_text_len = 6;
    m.prompt = {2, 2, 2, 2, true, true, false, false};
    m.audio_enabled = true;
    m.backbone_init = BackboneInit::normal;
    return m;
}

struct GradcheckOptions {
    double epsilon = 1e-3;
    /// Denominator floor in |a - n| / max(|a|, |n|, floor).
    double floor = 1e-6;
    int batch = 2;
    int frames = 2;
    std::uint64_t seed = 0;
};

struct ParamGradError {
    std::string name;
    std::size_t elements = 0;
    double max_rel_error = 0.0;
};

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t checked_elements = 0;
    std::vector<ParamGradError> per_parameter;
    /// Frozen parameters that received a gradient (must be empty).
    std::vector<std::string> frozen_with_gradient;
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central-difference check of every trainable gradient on one fixed random
/// batch, in double precision. Parameters are restored bit-exactly.
///
/// Only the branch a parameter feeds is recomputed: text prompts re-run the
/// text encoder, video prompts the vision encoder, and a projection entry
/// W(i, j) shifts projected column j by +-eps * A(:, i).
inline GradcheckResult gradient_check(const ModelConfig& cfg, const GradcheckOptions& opt = {}) {
    using M = MultimodalModel<double>;
    using Mat = Matrix<double>;
    M model(cfg, opt.seed);
    auto& store = model.params();
    const auto names = class_names();

    Batch<double> batch;
    batch.frames_per_video = opt.frames;
    {
        auto rng = derive_rng(opt.seed, "gradcheck.batch");
        const int side = cfg.encoder.image_size;
        batch.frames.resize(opt.batch * opt.frames, 3 * side * side);
        for (Eigen::Index i = 0; i < batch.frames.size(); ++i) batch.frames.data()[i] = rng.uniform(-1.0, 1.0);
        if (cfg.audio_enabled) {
            batch.audio.resize(opt.batch, kAudioEmbedDim);
            for (Eigen::Index i = 0; i < batch.audio.size(); ++i) batch.audio.data()[i] = rng.normal();
        }
        for (int b = 0; b < opt.batch; ++b) batch.labels.push_back(b % static_cast<int>(names.size()));
    }

    // Analytic gradients.
    store.zero_grad();
    {
        Tape<double> t;
        M::Binder bind(t, store, true);
        const auto loss = t.cross_entropy(model.forward(t, bind, batch, names), batch.labels);
        t.backward(loss);
    }

    GradcheckResult result;
    for (const auto& p : store)
        if (!p.trainable && p.grad.size() != 0) result.frozen_with_gradient.push_back(p.name);

    // Cached branch outputs at the unperturbed point.
    const auto text_value = [&] { return model.encode_text(names); };
    const auto visual_value = [&] {
        Tape<double> t;
        M::Binder bind(t, store, false);
        return Mat(t.value(t.group_mean(model.frame_features(t, bind, batch.frames), opt.frames)));
    };
    const auto audio_value = [&]() -> std::optional<Mat> {
        if (!cfg.audio_enabled) return std::nullopt;
        Tape<double> t;
        M::Binder bind(t, store, false);
        return Mat(t.value(model.audio_features(t, bind, batch.audio)));
    };
    const auto head_loss = [&](const Mat& text, const Mat& visual, const std::optional<Mat>& audio) {
        Tape<double> t;
        M::Binder bind(t, store, false);
        std::optional<Tape<double>::Var> a;
        if (audio) a = t.constant_ref(*audio);
        const auto fused = model.fused_features(t, t.constant_ref(visual), a);
        const auto logits = model.logits(t, bind, fused, t.constant_ref(text));
        return t.value(t.cross_entropy(logits, batch.labels))(0, 0);
    };

    const Mat text0 = text_value();
    const Mat visual0 = visual_value();
    const auto audio0 = audio_value();
    const double eps = opt.epsilon;

    const auto check = [&](Parameter<double>& p, auto&& loss_at) {
        ParamGradError pe{p.name, static_cast<std::size_t>(p.value.size()), 0.0};
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            const double numeric = (loss_at(i, eps) - loss_at(i, -eps)) / (2.0 * eps);
            const double analytic = p.grad.size() ? p.grad.data()[i] : 0.0;
            pe.max_rel_error = std::max(pe.max_rel_error, relative_error(analytic, numeric, opt.floor));
        }
        result.checked_elements += pe.elements;
        if (pe.max_rel_error >= result.max_rel_error) {
            result.max_rel_error = pe.max_rel_error;
            result.worst_parameter = pe.name;
        }
        result.per_parameter.push_back(std::move(pe));
    };
    const auto perturbed = [](Parameter<double>& p, Eigen::Index i, double d, auto&& fn) {
        const double orig = p.value.data()[i];
        p.value.data()[i] = orig + d;
        const double out = fn();
        p.value.data()[i] = orig;
        return out;
    };

    for (const auto id : model.text_prompt_ids()) {
        auto& p = store[id];
        if (!p.trainable) continue;
        check(p, [&](Eigen::Index i, double d) {
            return perturbed(p, i, d, [&] { return head_loss(text_value(), visual0, audio0); });
        });
    }
    for (const auto id : model.video_prompt_ids()) {
        auto& p = store[id];
        if (!p.trainable) continue;
        check(p, [&](Eigen::Index i, double d) {
            return perturbed(p, i, d, [&] { return head_loss(text0, visual_value(), audio0); });
        });
    }
    if (const auto wid = model.projection_weight_id()) {
        auto& w = store[*wid];
        const Eigen::Index cols = w.value.cols();
        Mat shifted = *audio0;
        check(w, [&](Eigen::Index k, double d) {
            const Eigen::Index i = k / cols, j = k % cols;  // row-major storage
            shifted.col(j) = audio0->col(j) + d * batch.audio.col(i);
            const double out = head_loss(text0, visual0, shifted);
            shifted.col(j) = audio0->col(j);
            return out;
        });
        auto& b = store[*model.projection_bias_id()];
        check(b, [&](Eigen::Index j, double d) {
            shifted.col(j).array() = audio0->col(j).array() + d;
            const double out = head_loss(text0, visual0, shifted);
            shifted.col(j) = audio0->col(j);
            return out;
        });
    }
    auto& ls = store[model.logit_scale_id()];
    check(ls, [&](Eigen::Index i, double d) {
        return perturbed(ls, i, d, [&] { return head_loss(text0, visual0, audio0); });
    });

    store.zero_grad();
    return result;
}

}  // namespace promptfuse
