#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "promptfuse/error.hpp"

namespace promptfuse {

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 44100;

    double duration_seconds() const noexcept {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

enum class WindowKind { hann };

struct SpectrogramConfig {
    int n_fft = 1024;
    int hop = 512;
    WindowKind window = WindowKind::hann;
    double log_floor = 1e-10;
    bool center_pad = true;

    void validate() const {
        if (n_fft <= 0 || !std::has_single_bit(static_cast<unsigned>(n_fft)))
            throw ValidationError("n_fft must be a positive power of two");
        if (hop <= 0 || hop > n_fft) throw ValidationError("hop must satisfy 0 < hop <= n_fft");
        if (!(log_floor > 0.0)) throw ValidationError("log_floor must be positive");
    }

    int freq_bins() const noexcept { return n_fft / 2 + 1; }

    /// Closed-form frame count for a signal of `length` samples.
    std::size_t time_frames(std::size_t length) const noexcept {
        const auto n = static_cast<std::size_t>(n_fft);
        const auto h = static_cast<std::size_t>(hop);
        if (center_pad) return length / h + 1;
        return length <= n ? 1 : (length - n) / h + 1;
    }
};

/// Log-power spectrogram, rows = frequency bins, columns = time frames.
struct Spectrogram {
    Eigen::MatrixXd values;

    Eigen::Index freq_bins() const noexcept { return values.rows(); }
    Eigen::Index time_frames() const noexcept { return values.cols(); }
};

/// Static front-end settings that fix the audio encoder's input shape.
struct AudioConfig {
    int sample_rate = 44100;
    double clip_seconds = 5.0;
    SpectrogramConfig spectrogram{};

    std::size_t clip_samples() const noexcept {
        return static_cast<std::size_t>(std::llround(clip_seconds * sample_rate));
    }
    Eigen::Index freq_bins() const noexcept { return spectrogram.freq_bins(); }
    Eigen::Index time_frames() const noexcept {
        return static_cast<Eigen::Index>(spectrogram.time_frames(clip_samples()));
    }
};

namespace detail {

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    bool has(std::size_t n) const noexcept { return bytes_.size() - pos_ >= n; }
    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (!has(n)) throw ParseError(std::string("wav: truncated while reading ") + what);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
        pos_ += 4;
        return v;
    }
    std::string tag(const char* what) {
        need(4, what);
        std::string t(reinterpret_cast<const char*>(bytes_.data() + pos_), 4);
        pos_ += 4;
        return t;
    }
    void skip(std::size_t n, const char* what) {
        need(n, what);
        pos_ += n;
    }
    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline float float_from_le(const std::uint8_t* p) {
    std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(bits);
}

}  // namespace detail

/// Decodes a RIFF/WAVE container holding PCM16 or IEEE float32 samples.
/// Multi-channel audio is averaged to mono; PCM16 is scaled by 1/32768.
inline Waveform decode_wav(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    if (r.tag("RIFF header") != "RIFF") throw ParseError("wav: missing RIFF header");
    r.u32("RIFF size");
    if (r.tag("WAVE tag") != "WAVE") throw ParseError("wav: missing WAVE tag");

    int format = -1, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    while (true) {
        if (r.remaining() == 0) throw ParseError("wav: no data chunk");
        const auto id = r.tag("chunk id");
        const auto size = r.u32("chunk size");
        if (id == "fmt ") {
            auto body = detail::ByteReader(r.take(size, "fmt chunk"));
            format = body.u16("format tag");
            channels = body.u16("channel count");
            rate = body.u32("sample rate");
            body.u32("byte rate");
            body.u16("block align");
            bits = body.u16("bits per sample");
            if (format == 0xFFFE) {  // WAVE_FORMAT_EXTENSIBLE: the sub-format GUID starts with the tag
                body.u16("extension size");
                body.u16("valid bits");
                body.u32("channel mask");
                format = body.u16("sub-format");
            }
            have_fmt = true;
            if (size % 2) r.skip(std::min<std::size_t>(1, r.remaining()), "pad");
        } else if (id == "data") {
            if (!have_fmt) throw ParseError("wav: data chunk before fmt chunk");
            const bool pcm16 = format == 1 && bits == 16;
            const bool float32 = format == 3 && bits == 32;
            if (!pcm16 && !float32)
                throw ValidationError("wav: unsupported format (tag " + std::to_string(format) + ", " +
                                      std::to_string(bits) + " bits); need PCM16 or float32");
            if (channels < 1) throw ParseError("wav: zero channels");
            if (rate == 0) throw ParseError("wav: zero sample rate");
            const auto data = r.take(size, "sample data");
            const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
            if (size % frame_bytes != 0) throw ParseError("wav: data size is not a whole number of frames");

            Waveform w;
            w.sample_rate = static_cast<int>(rate);
            const std::size_t frames = size / frame_bytes;
            w.samples.resize(frames);
            for (std::size_t f = 0; f < frames; ++f) {
                double acc = 0.0;
                for (int c = 0; c < channels; ++c) {
                    const auto* p = data.data() + f * frame_bytes + static_cast<std::size_t>(c) * (bits / 8);
                    if (pcm16) {
                        const auto raw = static_cast<std::int16_t>(p[0] | (p[1] << 8));
                        acc += raw / 32768.0;
                    } else {
                        acc += static_cast<double>(detail::float_from_le(p));
                    }
                }
                double v = acc / channels;
                if (!std::isfinite(v)) throw ParseError("wav: non-finite sample");
                w.samples[f] = std::clamp(v, -1.0, 1.0);
            }
            return w;
        } else {
            r.skip(size + (size % 2 && r.remaining() > size ? 1 : 0), "chunk body");
        }
    }
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read error on " + path.string());
    return bytes;
}

inline Waveform load_wav(const std::filesystem::path& path) { return decode_wav(read_file_bytes(path)); }

/// Mono PCM16 encoding; samples are clamped to [-1, 1] and rounded.
inline std::vector<std::uint8_t> encode_wav_pcm16(const Waveform& w) {
    std::vector<std::uint8_t> out;
    const auto put16 = [&](std::uint16_t v) {
        out.push_back(static_cast<std::uint8_t>(v & 0xff));
        out.push_back(static_cast<std::uint8_t>(v >> 8));
    };
    const auto put32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    };
    const auto tag = [&](const char* t) { out.insert(out.end(), t, t + 4); };
    const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    tag("RIFF");
    put32(36 + data_bytes);
    tag("WAVE");
    tag("fmt ");
    put32(16);
    put16(1);
    put16(1);
    put32(static_cast<std::uint32_t>(w.sample_rate));
    put32(static_cast<std::uint32_t>(w.sample_rate) * 2);
    put16(2);
    put16(16);
    tag("data");
    put32(data_bytes);
    for (double s : w.samples) {
        const auto q = static_cast<long>(std::lround(std::clamp(s, -1.0, 1.0) * 32768.0));
        put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
    }
    return out;
}

inline void save_wav_pcm16(const Waveform& w, const std::filesystem::path& path) {
    const auto bytes = encode_wav_pcm16(w);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write error on " + path.string());
}

/// Linear-interpolation resampling to `target_rate`.
inline Waveform resample(const Waveform& w, int target_rate) {
    if (target_rate <= 0) throw ValidationError("resample: target rate must be positive");
    if (target_rate == w.sample_rate || w.samples.empty()) return Waveform{w.samples, target_rate};

    const double ratio = static_cast<double>(w.sample_rate) / target_rate;
    const auto out_len = static_cast<std::size_t>(
        std::llround(static_cast<double>(w.samples.size()) * target_rate / w.sample_rate));
    Waveform out;
    out.sample_rate = target_rate;
    out.samples.resize(out_len);
    const std::size_t last = w.samples.size() - 1;
    for (std::size_t i = 0; i < out_len; ++i) {
        const double pos = static_cast<double>(i) * ratio;
        const auto lo = std::min(static_cast<std::size_t>(pos), last);
        const auto hi = std::min(lo + 1, last);
        const double frac = std::clamp(pos - static_cast<double>(lo), 0.0, 1.0);
        out.samples[i] = w.samples[lo] + (w.samples[hi] - w.samples[lo]) * frac;
    }
    return out;
}

/// Truncates or zero-pads to exactly `length` samples.
inline Waveform fit_length(Waveform w, std::size_t length) {
    w.samples.resize(length, 0.0);
    return w;
}

/// Periodic Hann window of length n.
inline std::vector<double> hann_window(int n) {
    std::vector<double> win(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) win[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
    return win;
}

/// Hann-windowed STFT power, clamped at `log_floor`, natural log.
/// With center padding the signal gets n_fft/2 zeros on each side.
inline Spectrogram log_spectrogram(const Waveform& w, const SpectrogramConfig& cfg) {
    cfg.validate();
    if (w.samples.empty()) throw ValidationError("log_spectrogram: empty waveform");

    const auto n_fft = static_cast<std::size_t>(cfg.n_fft);
    const auto hop = static_cast<std::size_t>(cfg.hop);
    const std::size_t pad = cfg.center_pad ? n_fft / 2 : 0;
    const std::size_t frames = cfg.time_frames(w.samples.size());

    std::vector<double> padded(std::max(pad + w.samples.size() + pad, (frames - 1) * hop + n_fft), 0.0);
    std::copy(w.samples.begin(), w.samples.end(), padded.begin() + static_cast<std::ptrdiff_t>(pad));

    const auto window = hann_window(cfg.n_fft);
    const double log_floor = std::log(cfg.log_floor);
    Spectrogram spec;
    spec.values.resize(cfg.freq_bins(), static_cast<Eigen::Index>(frames));

    Eigen::FFT<double> fft;
    std::vector<double> frame(n_fft);
    std::vector<std::complex<double>> bins;
    for (std::size_t t = 0; t < frames; ++t) {
        const double* src = padded.data() + t * hop;
        bool silent = true;
        for (std::size_t i = 0; i < n_fft; ++i) {
            frame[i] = src[i] * window[i];
            silent = silent && frame[i] == 0.0;
        }
        if (silent) {
            spec.values.col(static_cast<Eigen::Index>(t)).setConstant(log_floor);
            continue;
        }
        fft.fwd(bins, frame);
        for (int k = 0; k < cfg.freq_bins(); ++k) {
            const double power = std::norm(bins[static_cast<std::size_t>(k)]);
            spec.values(k, static_cast<Eigen::Index>(t)) = power > cfg.log_floor ? std::log(power) : log_floor;
        }
    }
    return spec;
}

/// Full audio path for one clip: resample, fix duration, spectrogram.
inline Spectrogram audio_to_spectrogram(const Waveform& w, const AudioConfig& cfg) {
    return log_spectrogram(fit_length(resample(w, cfg.sample_rate), cfg.clip_samples()), cfg.spectrogram);
}

}  // namespace promptfuse
