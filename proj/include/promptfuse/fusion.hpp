#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "promptfuse/config.hpp"
#include "promptfuse/error.hpp"
#include "promptfuse/tape.hpp"

namespace promptfuse {

/// Affine map from the audio encoder's 1024-d output to the shared 512-d space.
/// `weights` is stored input-major (1024 x 512) so the map is x * W + b.
template <class S>
struct ProjectionLayer {
    Matrix<S> weights = Matrix<S>::Zero(kAudioEmbedDim, kEmbedDim);
    RowVector<S> bias = RowVector<S>::Zero(kEmbedDim);
};

/// Cosine logits: logits(i, j) = logit_scale * <fused_i, text_j>.
template <class S>
struct SimilarityMatrix {
    Matrix<S> logits;
    S logit_scale = S(1);
};

/// Mean over the T frame rows.
template <class S>
RowVector<S> temporal_pool(const Matrix<S>& frame_features) {
    if (frame_features.rows() == 0) throw ValidationError("temporal_pool: no frames");
    return frame_features.colwise().sum() / static_cast<S>(frame_features.rows());
}

template <class S>
RowVector<S> project_audio(const RowVector<S>& audio_embedding, const ProjectionLayer<S>& layer) {
    if (audio_embedding.size() != layer.weights.rows())
        throw ShapeError("project_audio: expected input of length " + std::to_string(layer.weights.rows()));
    return audio_embedding * layer.weights + layer.bias;
}

/// Additive fusion followed by one L2 normalisation. With audio disabled the
/// visual feature is normalised alone.
template <class S>
RowVector<S> fuse(const RowVector<S>& visual, const RowVector<S>& audio, bool audio_enabled,
                  FusionNorm norm = FusionNorm::after_sum) {
    if (visual.size() != kEmbedDim || (audio_enabled && audio.size() != kEmbedDim))
        throw ShapeError("fuse: features must have length 512");
    const auto unit = [](const RowVector<S>& v) -> RowVector<S> {
        const S n = v.norm();
        if (!(n > S(0))) throw ValidationError("degenerate feature: zero-norm fused vector");
        return v / n;
    };
    if (!audio_enabled) return unit(visual);
    if (norm == FusionNorm::before_and_after) return unit(unit(visual) + unit(audio));
    return unit(visual + audio);
}

template <class S>
SimilarityMatrix<S> similarity_logits(const Matrix<S>& fused, const Matrix<S>& text, S logit_scale) {
    if (fused.cols() != text.cols()) throw ShapeError("similarity_logits: feature widths differ");
    const auto check = [](const Matrix<S>& m, const char* what) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            if (std::abs(static_cast<double>(m.row(r).norm()) - 1.0) > 1e-5)
                throw ValidationError(std::string("similarity_logits: ") + what + " row " + std::to_string(r) +
                                      " is not L2-normalised");
    };
    check(fused, "fused");
    check(text, "text");
    return {logit_scale * fused * text.transpose(), logit_scale};
}

/// Mean cross-entropy of softmax(logits_i) against labels_i.
template <class S>
S contrastive_loss(const SimilarityMatrix<S>& sim, std::span<const int> labels) {
    const auto& l = sim.logits;
    if (static_cast<std::size_t>(l.rows()) != labels.size()) throw ShapeError("contrastive_loss: label count mismatch");
    if (l.rows() == 0) return S(0);
    S total = 0;
    for (Eigen::Index r = 0; r < l.rows(); ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= l.cols()) throw ValidationError("contrastive_loss: label out of range");
        const S mx = l.row(r).maxCoeff();
        total += mx + std::log((l.row(r).array() - mx).exp().sum()) - l(r, y);
    }
    return total / static_cast<S>(l.rows());
}

/// Row-wise argmax; ties resolve to the lowest class index.
template <class S>
std::vector<int> predict(const SimilarityMatrix<S>& sim) {
    std::vector<int> out(static_cast<std::size_t>(sim.logits.rows()));
    for (Eigen::Index r = 0; r < sim.logits.rows(); ++r) {
        int best = 0;
        for (Eigen::Index c = 1; c < sim.logits.cols(); ++c)
            if (sim.logits(r, c) > sim.logits(r, best)) best = static_cast<int>(c);
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

}  // namespace promptfuse
