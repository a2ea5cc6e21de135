#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "promptfuse/config.hpp"
#include "promptfuse/error.hpp"
#include "promptfuse/rng.hpp"
#include "promptfuse/tape.hpp"

namespace promptfuse {

// ---- tokenizer --------------------------------------------------------------

inline constexpr int kPadToken = 0;
inline constexpr int kStartToken = 1;
inline constexpr int kEndToken = 2;
inline constexpr int kFirstWordToken = 3;

/// Word-level id: FNV-1a of the word folded into the non-reserved range.
inline int word_token(std::string_view word, int vocab_size) {
    return kFirstWordToken + static_cast<int>(fnv1a64(word) % static_cast<std::uint64_t>(vocab_size - kFirstWordToken));
}

/// [START, word ids..., END, PAD...] padded to `max_len`. Names are lowercase
/// words separated by single spaces.
inline std::vector<int> tokenize_class_name(std::string_view name, int vocab_size, int max_len) {
    if (name.empty()) throw ValidationError("tokenize: class name must be non-empty");
    std::vector<int> ids{kStartToken};
    std::size_t pos = 0;
    while (pos <= name.size()) {
        const auto end = std::min(name.find(' ', pos), name.size());
        const auto word = name.substr(pos, end - pos);
        if (word.empty() || !std::all_of(word.begin(), word.end(), [](char c) { return c >= 'a' && c <= 'z'; }))
            throw ValidationError("tokenize: class name must be lowercase alphabetic words: \"" + std::string(name) + "\"");
        ids.push_back(word_token(word, vocab_size));
        pos = end + 1;
    }
    ids.push_back(kEndToken);
    if (static_cast<int>(ids.size()) > max_len)
        throw ValidationError("tokenize: \"" + std::string(name) + "\" needs " + std::to_string(ids.size()) +
                              " tokens, max_text_len is " + std::to_string(max_len));
    ids.resize(static_cast<std::size_t>(max_len), kPadToken);
    return ids;
}

inline int end_position(const std::vector<int>& ids) {
    const auto it = std::find(ids.begin(), ids.end(), kEndToken);
    if (it == ids.end()) throw ValidationError("tokenize: sequence has no END token");
    return static_cast<int>(it - ids.begin());
}

// ---- prompt injection -------------------------------------------------------

enum class TokenKind { text, patch };

template <class S>
struct TokenSequence {
    Matrix<S> vectors;  // seq_len x width
    TokenKind kind = TokenKind::text;
};

/// Position of the first prompt token: right after the start/class token.
inline constexpr Eigen::Index kPromptOffset = 1;

/// Deep prompting for one layer of one sequence. Layer 0 inserts the P prompt
/// rows after the start/class token; layers in (0, depth) overwrite those rows
/// with that layer's prompts; layers >= depth pass everything through.
template <class S>
TokenSequence<S> inject_prompts(const TokenSequence<S>& input, const Matrix<S>& prompts, int layer_index,
                                const PromptConfig& cfg) {
    const bool text = input.kind == TokenKind::text;
    const int depth = text ? (cfg.enabled_text ? cfg.text_depth : 0) : (cfg.enabled_video ? cfg.video_depth : 0);
    const Eigen::Index p = text ? cfg.active_text_tokens() : cfg.active_video_tokens();
    if (layer_index < 0) throw ValidationError("inject_prompts: negative layer index");
    if (depth == 0 || p == 0 || layer_index >= depth) return input;
    if (prompts.cols() != input.vectors.cols()) throw ShapeError("inject_prompts: prompt width does not match sequence width");
    if (prompts.rows() != p) throw ShapeError("inject_prompts: expected " + std::to_string(p) + " prompt rows");

    TokenSequence<S> out{Matrix<S>(), input.kind};
    const auto& x = input.vectors;
    if (x.rows() < kPromptOffset) throw ShapeError("inject_prompts: empty sequence");
    if (layer_index == 0) {
        out.vectors.resize(x.rows() + p, x.cols());
        out.vectors.topRows(kPromptOffset) = x.topRows(kPromptOffset);
        out.vectors.middleRows(kPromptOffset, p) = prompts;
        out.vectors.bottomRows(x.rows() - kPromptOffset) = x.bottomRows(x.rows() - kPromptOffset);
    } else {
        if (x.rows() < kPromptOffset + p) throw ShapeError("inject_prompts: sequence shorter than its prompt block");
        out.vectors = x;
        out.vectors.middleRows(kPromptOffset, p) = prompts;
    }
    return out;
}

// ---- convolution for the audio stand-in -------------------------------------

/// Channel-major feature map: rows = channels, cols = height * width.
template <class S>
struct FeatureMap {
    Matrix<S> data;
    Eigen::Index height = 0;
    Eigen::Index width = 0;

    Eigen::Index channels() const noexcept { return data.rows(); }
};

/// 2-D convolution without bias via im2col. `weight` is Cout x (Cin*k*k),
/// laid out (cin, ky, kx).
template <class S>
FeatureMap<S> conv2d(const FeatureMap<S>& in, const Matrix<S>& weight, int kernel, int stride, int pad) {
    const Eigen::Index cin = in.channels();
    if (weight.cols() != cin * kernel * kernel) throw ShapeError("conv2d: weight does not match input channels");
    const Eigen::Index ho = (in.height + 2 * pad - kernel) / stride + 1;
    const Eigen::Index wo = (in.width + 2 * pad - kernel) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input smaller than kernel");

    Matrix<S> cols(cin * kernel * kernel, ho * wo);
    for (Eigen::Index c = 0; c < cin; ++c)
        for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
                const Eigen::Index row = (c * kernel + ky) * kernel + kx;
                S* dst = cols.row(row).data();
                for (Eigen::Index y = 0; y < ho; ++y) {
                    const Eigen::Index iy = y * stride - pad + ky;
                    for (Eigen::Index x = 0; x < wo; ++x) {
                        const Eigen::Index ix = x * stride - pad + kx;
                        dst[y * wo + x] = (iy >= 0 && iy < in.height && ix >= 0 && ix < in.width)
                                              ? in.data(c, iy * in.width + ix)
                                              : S(0);
                    }
                }
            }
    FeatureMap<S> out;
    out.height = ho;
    out.width = wo;
    out.data.noalias() = weight * cols;
    return out;
}

}  // namespace promptfuse
