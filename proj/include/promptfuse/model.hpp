#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "promptfuse/audio.hpp"
#include "promptfuse/config.hpp"
#include "promptfuse/encoders.hpp"
#include "promptfuse/fusion.hpp"
#include "promptfuse/params.hpp"
#include "promptfuse/rng.hpp"
#include "promptfuse/tape.hpp"

namespace promptfuse {

/// Standard deviation of the normal init for embeddings, projections and prompts.
inline constexpr double kInitStd = 0.02;

/// Affine normalisation applied to log-power spectrogram cells before the
/// audio stack: (x - offset) / scale.
inline constexpr double kSpectrogramOffset = -10.0;
inline constexpr double kSpectrogramScale = 10.0;

/// One mini-batch in model units. `frames` holds B*T normalised frames, one
/// per row, planar (channel, y, x); `audio` holds B frozen audio embeddings.
template <class S>
struct Batch {
    Matrix<S> frames;
    int frames_per_video = 1;
    Matrix<S> audio;
    std::vector<int> labels;

    Eigen::Index size() const noexcept { return frames.rows() / frames_per_video; }
};

/// Frozen text, vision and audio encoders plus the trainable prompt tokens,
/// audio projection and logit scale.
template <class S>
class MultimodalModel {
public:
    using Mat = Matrix<S>;
    using Var = typename Tape<S>::Var;

    /// Builds and initialises every parameter. Each parameter draws from its
    /// own stream derived from (seed, name), so configurations that share a
    /// parameter name share its initial value.
    MultimodalModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        declare(seed);
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    ParameterStore<S>& params() noexcept { return store_; }
    const ParameterStore<S>& params() const noexcept { return store_; }
    ParameterPartition partition() const { return partition_of(store_); }

    const std::vector<ParamId>& text_prompt_ids() const noexcept { return text_.prompts; }
    const std::vector<ParamId>& video_prompt_ids() const noexcept { return vision_.prompts; }
    std::optional<ParamId> projection_weight_id() const noexcept { return head_.proj_w; }
    std::optional<ParamId> projection_bias_id() const noexcept { return head_.proj_b; }
    ParamId logit_scale_id() const noexcept { return head_.logit_scale; }

    S logit_scale() const {
        return static_cast<S>(std::exp(std::min<double>(store_[head_.logit_scale].value(0, 0), max_log_scale())));
    }
    double max_log_scale() const { return std::log(cfg_.logit_scale_max); }

    ProjectionLayer<S> projection_layer() const {
        if (!head_.proj_w) throw ValidationError("audio is disabled: no projection layer");
        return {store_[*head_.proj_w].value, store_[*head_.proj_b].value};
    }

    /// Maps parameter ids to tape variables. With `track` set, trainable
    /// parameters become gradient leaves; everything else is a constant.
    class Binder {
    public:
        Binder(Tape<S>& tape, ParameterStore<S>& store, bool track) : tape_(tape), store_(store), track_(track) {}

        Var operator()(ParamId id) {
            if (auto it = cache_.find(id); it != cache_.end()) return it->second;
            auto& p = store_[id];
            const Var v = (track_ && p.trainable) ? tape_.parameter(p.value, p.grad) : tape_.constant_ref(p.value);
            cache_.emplace(id, v);
            return v;
        }

    private:
        Tape<S>& tape_;
        ParameterStore<S>& store_;
        bool track_;
        std::unordered_map<ParamId, Var> cache_;
    };

    // ---- text branch ------------------------------------------------------

    std::vector<std::vector<int>> tokenize(std::span<const std::string> names) const {
        std::vector<std::vector<int>> ids;
        for (const auto& n : names) ids.push_back(tokenize_class_name(n, cfg_.encoder.vocab_size, cfg_.encoder.max_text_len));
        return ids;
    }

    /// C x 512 text features (not normalised), one row per class name.
    Var text_features(Tape<S>& t, Binder& bind, std::span<const std::string> names) const {
        if (names.empty()) throw ValidationError("encode_text: need at least one class name");
        const auto ids = tokenize(names);
        const auto& e = cfg_.encoder;
        const Eigen::Index len = e.max_text_len, c = static_cast<Eigen::Index>(names.size());
        const Mat& tok = store_[text_.token_embedding].value;
        const Mat& pos = store_[text_.positional].value;
        Mat x(c * len, e.width);
        for (Eigen::Index i = 0; i < c; ++i)
            for (Eigen::Index j = 0; j < len; ++j)
                x.row(i * len + j) = tok.row(ids[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) + pos.row(j);

        Var h = t.constant(std::move(x));
        Eigen::Index seq = len;
        h = run_blocks(t, bind, h, text_.blocks, text_.prompts, c, seq, true);

        const Eigen::Index shift = static_cast<Eigen::Index>(text_.prompts.size() ? cfg_.prompt.active_text_tokens() : 0);
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < c; ++i) rows.push_back(i * seq + end_position(ids[static_cast<std::size_t>(i)]) + shift);
        h = t.select_rows(h, std::move(rows));
        h = t.layer_norm(h, store_[text_.ln_final_w].value, store_[text_.ln_final_b].value);
        return t.linear(h, store_[text_.projection].value);
    }

    // ---- vision branch ----------------------------------------------------

    /// F x 512 per-frame features. `frames` is F x (3 * image_size^2), planar.
    Var frame_features(Tape<S>& t, Binder& bind, const Mat& frames) const {
        const auto& e = cfg_.encoder;
        const Eigen::Index side = e.image_size, ps = e.patch_size, per_side = side / ps;
        const Eigen::Index np = e.patches_per_frame(), f = frames.rows();
        if (frames.cols() != 3 * side * side)
            throw ShapeError("encode_frames: expected frames of 3x" + std::to_string(side) + "x" + std::to_string(side));
        if (f == 0) throw ShapeError("encode_frames: no frames");

        Mat patches(f * np, e.patch_dim());
        for (Eigen::Index fi = 0; fi < f; ++fi)
            for (Eigen::Index py = 0; py < per_side; ++py)
                for (Eigen::Index px = 0; px < per_side; ++px) {
                    auto row = patches.row(fi * np + py * per_side + px);
                    Eigen::Index k = 0;
                    for (Eigen::Index c = 0; c < 3; ++c)
                        for (Eigen::Index dy = 0; dy < ps; ++dy)
                            for (Eigen::Index dx = 0; dx < ps; ++dx)
                                row(k++) = frames(fi, (c * side + py * ps + dy) * side + px * ps + dx);
                }
        const Mat embedded = patches * store_[vision_.patch_embed].value;

        const Eigen::Index seq0 = np + 1;
        const Mat& cls = store_[vision_.class_embedding].value;
        const Mat& pos = store_[vision_.positional].value;
        Mat x(f * seq0, e.width);
        for (Eigen::Index fi = 0; fi < f; ++fi) {
            x.row(fi * seq0) = cls.row(0) + pos.row(0);
            x.middleRows(fi * seq0 + 1, np) = embedded.middleRows(fi * np, np) + pos.bottomRows(np);
        }
        Var h = t.constant(std::move(x));
        h = t.layer_norm(h, store_[vision_.ln_pre_w].value, store_[vision_.ln_pre_b].value);
        Eigen::Index seq = seq0;
        h = run_blocks(t, bind, h, vision_.blocks, vision_.prompts, f, seq, false);

        std::vector<Eigen::Index> rows;
        for (Eigen::Index fi = 0; fi < f; ++fi) rows.push_back(fi * seq);
        h = t.select_rows(h, std::move(rows));
        h = t.layer_norm(h, store_[vision_.ln_post_w].value, store_[vision_.ln_post_b].value);
        return t.linear(h, store_[vision_.projection].value);
    }

    // ---- audio branch -----------------------------------------------------

    /// Frozen audio encoder: residual conv stack, global average pool, then a
    /// linear map to 1024 dims.
    RowVector<S> encode_spectrogram(const Spectrogram& spec) const {
        const auto& a = cfg_.encoder.audio;
        if (spec.freq_bins() != a.freq_bins() || spec.time_frames() != a.time_frames())
            throw ShapeError("encode_spectrogram: expected " + std::to_string(a.freq_bins()) + "x" +
                             std::to_string(a.time_frames()) + " spectrogram, got " + std::to_string(spec.freq_bins()) +
                             "x" + std::to_string(spec.time_frames()));
        if (!audio_.stem) throw ValidationError("audio is disabled: no audio encoder");

        FeatureMap<S> x;
        x.height = spec.freq_bins();
        x.width = spec.time_frames();
        x.data.resize(1, x.height * x.width);
        for (Eigen::Index r = 0; r < x.height; ++r)
            for (Eigen::Index c = 0; c < x.width; ++c)
                x.data(0, r * x.width + c) = static_cast<S>((spec.values(r, c) - kSpectrogramOffset) / kSpectrogramScale);

        x = conv2d(x, store_[*audio_.stem].value, 3, 2, 1);
        x.data = x.data.cwiseMax(S(0));
        for (const auto& stage : audio_.stages) {
            FeatureMap<S> a1 = conv2d(x, store_[stage.conv_a].value, 3, 2, 1);
            a1.data = a1.data.cwiseMax(S(0));
            FeatureMap<S> b1 = conv2d(a1, store_[stage.conv_b].value, 3, 1, 1);
            const FeatureMap<S> sc = conv2d(x, store_[stage.shortcut].value, 1, 2, 0);
            b1.data = (b1.data + sc.data).cwiseMax(S(0));
            x = std::move(b1);
        }
        const RowVector<S> pooled = x.data.rowwise().mean().transpose();
        return pooled * store_[*audio_.fc_w].value + store_[*audio_.fc_b].value;
    }

    /// B x 512 projected audio features from B x 1024 frozen embeddings.
    Var audio_features(Tape<S>& t, Binder& bind, const Mat& embeddings) const {
        if (!head_.proj_w) throw ValidationError("audio is disabled: no projection layer");
        if (embeddings.cols() != kAudioEmbedDim) throw ShapeError("project_audio: expected 1024-wide embeddings");
        return t.add_row(t.matmul(t.constant(embeddings), bind(*head_.proj_w)), bind(*head_.proj_b));
    }

    // ---- head -------------------------------------------------------------

    /// Fused B x 512 unit features from pooled visual and (optional) audio features.
    Var fused_features(Tape<S>& t, Var visual, std::optional<Var> audio) const {
        if (!cfg_.audio_enabled || !audio) return t.normalize_rows(visual);
        if (cfg_.fusion_norm == FusionNorm::before_and_after)
            return t.normalize_rows(t.add(t.normalize_rows(visual), t.normalize_rows(*audio)));
        return t.normalize_rows(t.add(visual, *audio));
    }

    Var logits(Tape<S>& t, Binder& bind, Var fused, Var text) const {
        return t.scale_by_exp(t.matmul_nt(fused, t.normalize_rows(text)), bind(head_.logit_scale),
                              static_cast<S>(max_log_scale()));
    }

    /// B x C logits for a batch.
    Var forward(Tape<S>& t, Binder& bind, const Batch<S>& batch, std::span<const std::string> names) const {
        if (batch.frames_per_video < 1 || batch.frames.rows() % batch.frames_per_video != 0)
            throw ShapeError("forward: frame count is not a multiple of frames_per_video");
        const Var text = text_features(t, bind, names);
        const Var visual = t.group_mean(frame_features(t, bind, batch.frames), batch.frames_per_video);
        std::optional<Var> audio;
        if (cfg_.audio_enabled) {
            if (batch.audio.rows() != batch.size()) throw ShapeError("forward: one audio embedding per video required");
            audio = audio_features(t, bind, batch.audio);
        }
        return logits(t, bind, fused_features(t, visual, audio), text);
    }

    // ---- convenience, no gradient tracking ---------------------------------

    Mat encode_text(std::span<const std::string> names) {
        Tape<S> t;
        Binder bind(t, store_, false);
        return t.value(text_features(t, bind, names));
    }

    Mat encode_frames(const Mat& frames) {
        Tape<S> t;
        Binder bind(t, store_, false);
        return t.value(frame_features(t, bind, frames));
    }

private:
    struct BlockIds {
        ParamId ln1_w, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_w, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
    };
    struct TextIds {
        ParamId token_embedding{}, positional{}, ln_final_w{}, ln_final_b{}, projection{};
        std::vector<BlockIds> blocks;
        std::vector<ParamId> prompts;
    };
    struct VisionIds {
        ParamId patch_embed{}, class_embedding{}, positional{}, ln_pre_w{}, ln_pre_b{}, ln_post_w{}, ln_post_b{},
            projection{};
        std::vector<BlockIds> blocks;
        std::vector<ParamId> prompts;
    };
    struct StageIds {
        ParamId conv_a, conv_b, shortcut;
    };
    struct AudioIds {
        std::optional<ParamId> stem, fc_w, fc_b;
        std::vector<StageIds> stages;
    };
    struct HeadIds {
        std::optional<ParamId> proj_w, proj_b;
        ParamId logit_scale{};
    };

    enum class Init { zeros, ones, normal, he_normal, fan_in, logit_scale };

    ParamId add(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool trainable, Init init,
                std::uint64_t seed, Eigen::Index fan_in = 1) {
        const ParamId id = store_.add(name, rows, cols, trainable);
        auto& v = store_[id].value;
        auto rng = derive_rng(seed, name);
        switch (init) {
            case Init::zeros: v.setZero(); break;
            case Init::ones: v.setOnes(); break;
            case Init::normal:
            case Init::he_normal:
            case Init::fan_in: {
                const double sd = init == Init::normal      ? kInitStd
                                  : init == Init::he_normal ? std::sqrt(2.0 / static_cast<double>(fan_in))
                                                            : 1.0 / std::sqrt(static_cast<double>(fan_in));
                for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<S>(rng.normal(0.0, sd));
                break;
            }
            case Init::logit_scale: v.setConstant(static_cast<S>(cfg_.logit_scale_init)); break;
        }
        return id;
    }

    std::vector<BlockIds> declare_blocks(const std::string& prefix, std::uint64_t seed) {
        const Eigen::Index w = cfg_.encoder.width, hidden = w * cfg_.encoder.mlp_ratio;
        const bool fan_in = cfg_.backbone_init == BackboneInit::fan_in;
        const auto matrix = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
            return add(name, rows, cols, false, fan_in ? Init::fan_in : Init::normal, seed, rows);
        };
        std::vector<BlockIds> blocks;
        for (int l = 0; l < cfg_.encoder.layers; ++l) {
            const std::string p = prefix + ".layers." + std::to_string(l) + ".";
            BlockIds b{};
            b.ln1_w = add(p + "ln1.weight", 1, w, false, Init::ones, seed);
            b.ln1_b = add(p + "ln1.bias", 1, w, false, Init::zeros, seed);
            b.qkv_w = matrix(p + "attn.qkv.weight", w, 3 * w);
            b.qkv_b = add(p + "attn.qkv.bias", 1, 3 * w, false, Init::zeros, seed);
            b.out_w = matrix(p + "attn.out.weight", w, w);
            b.out_b = add(p + "attn.out.bias", 1, w, false, Init::zeros, seed);
            b.ln2_w = add(p + "ln2.weight", 1, w, false, Init::ones, seed);
            b.ln2_b = add(p + "ln2.bias", 1, w, false, Init::zeros, seed);
            b.fc1_w = matrix(p + "mlp.fc1.weight", w, hidden);
            b.fc1_b = add(p + "mlp.fc1.bias", 1, hidden, false, Init::zeros, seed);
            b.fc2_w = matrix(p + "mlp.fc2.weight", hidden, w);
            b.fc2_b = add(p + "mlp.fc2.bias", 1, w, false, Init::zeros, seed);
            blocks.push_back(b);
        }
        return blocks;
    }

    std::vector<ParamId> declare_prompts(const std::string& prefix, int tokens, int depth, bool enabled, bool frozen,
                                         std::uint64_t seed) {
        std::vector<ParamId> ids;
        if (!enabled || tokens <= 0) return ids;
        for (int l = 0; l < depth; ++l)
            ids.push_back(add(prefix + ".prompts." + std::to_string(l), tokens, cfg_.encoder.width, !frozen, Init::normal, seed));
        return ids;
    }

    void declare(std::uint64_t seed) {
        const auto& e = cfg_.encoder;
        const auto& pc = cfg_.prompt;
        const Eigen::Index w = e.width;

        text_.token_embedding = add("text.token_embedding", e.vocab_size, w, false, Init::normal, seed);
        text_.positional = add("text.positional", e.max_text_len, w, false, Init::normal, seed);
        text_.blocks = declare_blocks("text", seed);
        text_.ln_final_w = add("text.ln_final.weight", 1, w, false, Init::ones, seed);
        text_.ln_final_b = add("text.ln_final.bias", 1, w, false, Init::zeros, seed);
        text_.projection = add("text.projection", w, kEmbedDim, false, Init::normal, seed);

        vision_.patch_embed = add("vision.patch_embed", e.patch_dim(), w, false, Init::normal, seed);
        vision_.class_embedding = add("vision.class_embedding", 1, w, false, Init::normal, seed);
        vision_.positional = add("vision.positional", e.patches_per_frame() + 1, w, false, Init::normal, seed);
        vision_.ln_pre_w = add("vision.ln_pre.weight", 1, w, false, Init::ones, seed);
        vision_.ln_pre_b = add("vision.ln_pre.bias", 1, w, false, Init::zeros, seed);
        vision_.blocks = declare_blocks("vision", seed);
        vision_.ln_post_w = add("vision.ln_post.weight", 1, w, false, Init::ones, seed);
        vision_.ln_post_b = add("vision.ln_post.bias", 1, w, false, Init::zeros, seed);
        vision_.projection = add("vision.projection", w, kEmbedDim, false, Init::normal, seed);

        if (cfg_.audio_enabled) {
            const auto& ch = e.audio_channels;
            audio_.stem = add("audio.stem.weight", ch[0], 9, false, Init::he_normal, seed, 9);
            for (std::size_t s = 1; s < ch.size(); ++s) {
                const std::string p = "audio.stages." + std::to_string(s - 1) + ".";
                StageIds st{};
                st.conv_a = add(p + "conv_a.weight", ch[s], ch[s - 1] * 9, false, Init::he_normal, seed, ch[s - 1] * 9);
                st.conv_b = add(p + "conv_b.weight", ch[s], ch[s] * 9, false, Init::he_normal, seed, ch[s] * 9);
                st.shortcut = add(p + "shortcut.weight", ch[s], ch[s - 1], false, Init::he_normal, seed, ch[s - 1]);
                audio_.stages.push_back(st);
            }
            audio_.fc_w = add("audio.fc.weight", ch.back(), kAudioEmbedDim, false, Init::fan_in, seed, ch.back());
            audio_.fc_b = add("audio.fc.bias", 1, kAudioEmbedDim, false, Init::zeros, seed);
        }

        text_.prompts = declare_prompts("text", pc.text_tokens, pc.text_depth, pc.enabled_text, pc.frozen_text, seed);
        vision_.prompts = declare_prompts("vision", pc.video_tokens, pc.video_depth, pc.enabled_video, pc.frozen_video, seed);

        if (cfg_.audio_enabled) {
            head_.proj_w = add("head.audio_projection.weight", kAudioEmbedDim, kEmbedDim, true, Init::normal, seed);
            head_.proj_b = add("head.audio_projection.bias", 1, kEmbedDim, true, Init::zeros, seed);
        }
        head_.logit_scale = add("head.logit_scale", 1, 1, true, Init::logit_scale, seed);
    }

    /// Pre-LN transformer with deep prompting. `seq` is updated when layer 0
    /// inserts the prompt block.
    Var run_blocks(Tape<S>& t, Binder& bind, Var x, const std::vector<BlockIds>& blocks,
                   const std::vector<ParamId>& prompts, Eigen::Index groups, Eigen::Index& seq, bool causal) const {
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            if (l < prompts.size()) {
                const Var p = bind(prompts[l]);
                if (l == 0) {
                    x = t.insert_rows(x, p, seq, kPromptOffset);
                    seq += t.value(p).rows();
                } else {
                    x = t.replace_rows(x, p, seq, kPromptOffset);
                }
            }
            x = block(t, x, blocks[l], groups, seq, causal);
        }
        return x;
    }

    Var block(Tape<S>& t, Var x, const BlockIds& b, Eigen::Index groups, Eigen::Index seq, bool causal) const {
        const auto& v = [this](ParamId id) -> const Mat& { return store_[id].value; };
        Var h = t.layer_norm(x, v(b.ln1_w), v(b.ln1_b));
        h = t.linear(h, v(b.qkv_w), &v(b.qkv_b));
        h = t.attention(h, groups, seq, cfg_.encoder.heads, causal);
        x = t.add(x, t.linear(h, v(b.out_w), &v(b.out_b)));
        h = t.layer_norm(x, v(b.ln2_w), v(b.ln2_b));
        h = t.quick_gelu(t.linear(h, v(b.fc1_w), &v(b.fc1_b)));
        return t.add(x, t.linear(h, v(b.fc2_w), &v(b.fc2_b)));
    }

    ModelConfig cfg_;
    ParameterStore<S> store_;
    TextIds text_;
    VisionIds vision_;
    AudioIds audio_;
    HeadIds head_;
};

/// Closed-form trainable element count for a configuration.
inline std::size_t expected_trainable_count(const ModelConfig& cfg) {
    const auto& p = cfg.prompt;
    std::size_t n = 1;  // logit scale
    if (p.enabled_text && !p.frozen_text) n += static_cast<std::size_t>(p.text_depth) * p.text_tokens * cfg.encoder.width;
    if (p.enabled_video && !p.frozen_video)
        n += static_cast<std::size_t>(p.video_depth) * p.video_tokens * cfg.encoder.width;
    if (cfg.audio_enabled) n += static_cast<std::size_t>(kAudioEmbedDim) * kEmbedDim + kEmbedDim;
    return n;
}

template <class S>
ParameterPartition partition_parameters(const MultimodalModel<S>& model) {
    return model.partition();
}

}  // namespace promptfuse
