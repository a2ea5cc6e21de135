#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include <promptfuse/audio.hpp>
#include <promptfuse/rng.hpp>

using namespace promptfuse;

namespace {

/// Independent RIFF writer for fixtures (format tag, channels, bits, raw data).
std::vector<std::uint8_t> riff(int format, int channels, int rate, int bits, const std::vector<std::uint8_t>& data,
                               bool extensible = false) {
    std::vector<std::uint8_t> b;
    auto u16 = [&](unsigned v) { b.push_back(v & 0xff); b.push_back((v >> 8) & 0xff); };
    auto u32 = [&](unsigned v) { for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff); };
    auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
    const unsigned fmt_size = extensible ? 40 : 16;
    tag("RIFF");
    u32(4 + 8 + fmt_size + 8 + 8 + static_cast<unsigned>(data.size()));
    tag("WAVE");
    tag("fmt ");
    u32(fmt_size);
    u16(extensible ? 0xFFFE : format);
    u16(channels);
    u32(rate);
    u32(rate * channels * bits / 8);
    u16(channels * bits / 8);
    u16(bits);
    if (extensible) {
        u16(22);
        u16(bits);
        u32(0);
        u16(format);
        for (int i = 0; i < 14; ++i) b.push_back(0);
    }
    tag("LIST");  // unknown chunk to skip
    u32(0);
    tag("data");
    u32(static_cast<unsigned>(data.size()));
    b.insert(b.end(), data.begin(), data.end());
    return b;
}

std::vector<std::uint8_t> pcm16(std::initializer_list<int> samples) {
    std::vector<std::uint8_t> d;
    for (int s : samples) {
        const auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(s));
        d.push_back(u & 0xff);
        d.push_back(u >> 8);
    }
    return d;
}

Waveform sine(double freq, int rate, std::size_t n, double amp = 1.0) {
    Waveform w{std::vector<double>(n), rate};
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / rate);
    return w;
}

/// Brute-force DFT power of one windowed, centre-padded frame.
std::vector<double> dft_power(const Waveform& w, const SpectrogramConfig& cfg, std::size_t frame) {
    const int n = cfg.n_fft;
    const long start = static_cast<long>(frame * cfg.hop) - (cfg.center_pad ? n / 2 : 0);
    std::vector<double> power(static_cast<std::size_t>(n / 2 + 1));
    for (int k = 0; k <= n / 2; ++k) {
        std::complex<double> acc = 0;
        for (int i = 0; i < n; ++i) {
            const long idx = start + i;
            const double x = (idx >= 0 && idx < static_cast<long>(w.samples.size())) ? w.samples[static_cast<std::size_t>(idx)] : 0.0;
            const double win = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
            acc += x * win * std::polar(1.0, -2.0 * std::numbers::pi * k * i / n);
        }
        power[static_cast<std::size_t>(k)] = std::norm(acc);
    }
    return power;
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST(DecodeWav, Pcm16Scaling) {
    const auto w = decode_wav(riff(1, 1, 8000, 16, pcm16({0, 32767, -32768, 0})));
    ASSERT_EQ(w.samples.size(), 4u);
    EXPECT_EQ(w.sample_rate, 8000);
    EXPECT_EQ(w.samples[0], 0.0);
    EXPECT_EQ(w.samples[1], 32767.0 / 32768.0);
    EXPECT_EQ(w.samples[2], -1.0);
    EXPECT_EQ(w.samples[3], 0.0);
}

TEST(DecodeWav, StereoIdenticalChannelsAverage) {
    const auto w = decode_wav(riff(1, 2, 44100, 16, pcm16({1000, 1000, -2000, -2000})));
    ASSERT_EQ(w.samples.size(), 2u);
    EXPECT_EQ(w.samples[0], 1000.0 / 32768.0);
    EXPECT_EQ(w.samples[1], -2000.0 / 32768.0);
}

TEST(DecodeWav, OneSecondSilence) {
    const auto w = decode_wav(riff(1, 1, 44100, 16, std::vector<std::uint8_t>(88200, 0)));
    EXPECT_EQ(w.sample_rate, 44100);
    ASSERT_EQ(w.samples.size(), 44100u);
    for (double s : w.samples) ASSERT_EQ(s, 0.0);
}

TEST(DecodeWav, Float32AndExtensible) {
    std::vector<std::uint8_t> d;
    for (float f : {0.25f, -0.5f, 2.0f}) {
        const auto u = std::bit_cast<std::uint32_t>(f);
        for (int i = 0; i < 4; ++i) d.push_back((u >> (8 * i)) & 0xff);
    }
    const auto w = decode_wav(riff(3, 1, 16000, 32, d));
    ASSERT_EQ(w.samples.size(), 3u);
    EXPECT_EQ(w.samples[0], 0.25);
    EXPECT_EQ(w.samples[1], -0.5);
    EXPECT_EQ(w.samples[2], 1.0);  // clamped to [-1, 1]
    const auto x = decode_wav(riff(1, 1, 16000, 16, pcm16({16384}), true));
    EXPECT_EQ(x.samples.at(0), 0.5);
}

TEST(DecodeWav, Errors) {
    EXPECT_THROW(decode_wav(riff(2, 1, 8000, 4, {1, 2, 3, 4})), ValidationError);  // ADPCM
    EXPECT_THROW(decode_wav(riff(1, 1, 8000, 24, {1, 2, 3})), ValidationError);
    auto bytes = riff(1, 1, 8000, 16, pcm16({1, 2, 3, 4}));
    bytes.resize(bytes.size() - 3);
    EXPECT_THROW(decode_wav(bytes), ParseError);
    EXPECT_THROW(decode_wav(std::vector<std::uint8_t>{'R', 'I', 'F'}), ParseError);
    EXPECT_THROW(load_wav("/nonexistent.wav"), IoError);
}

TEST(DecodeWav, EncodeRoundTrip) {
    const auto w = sine(440, 16000, 1000, 0.7);
    const auto back = decode_wav(encode_wav_pcm16(w));
    ASSERT_EQ(back.samples.size(), w.samples.size());
    for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 32768.0);
}

TEST(Resample, IdentityConstantAndLength) {
    const auto w = sine(100, 44100, 500);
    EXPECT_EQ(resample(w, 44100).samples, w.samples);
    for (int target : {8000, 22050, 48000}) {
        const auto c = resample(Waveform{std::vector<double>(1001, 0.5), 44100}, target);
        EXPECT_EQ(c.samples.size(), static_cast<std::size_t>(std::llround(1001.0 * target / 44100)));
        for (double s : c.samples) ASSERT_DOUBLE_EQ(s, 0.5);
    }
    EXPECT_THROW(resample(w, 0), ValidationError);
}

TEST(Resample, ToneSurvivesDownsampling) {
    const auto out = resample(sine(440, 44100, 44100), 22050);
    ASSERT_EQ(out.sample_rate, 22050);
    // Brute-force DFT of the first 4410 samples: 0.2 s, so bin k is 5k Hz.
    const std::size_t n = 4410;
    std::vector<double> power(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
        std::complex<double> acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += out.samples[i] * std::polar(1.0, -2.0 * std::numbers::pi * k * i / n);
        power[k] = std::norm(acc);
    }
    EXPECT_EQ(argmax(power), 88u);  // 440 / 5
}

TEST(LogSpectrogram, ZeroSignalIsExactlyFloor) {
    SpectrogramConfig cfg;
    const auto s = log_spectrogram(Waveform{std::vector<double>(5000, 0.0), 44100}, cfg);
    EXPECT_EQ(s.freq_bins(), 513);
    for (Eigen::Index i = 0; i < s.values.size(); ++i) ASSERT_EQ(s.values.data()[i], std::log(1e-10));
}

TEST(LogSpectrogram, FrameCountExamples) {
    SpectrogramConfig cfg;
    EXPECT_EQ(log_spectrogram(sine(440, 44100, 44100), cfg).time_frames(), 87);
    EXPECT_EQ(cfg.time_frames(44100), 87u);
    AudioConfig a;
    const auto s = audio_to_spectrogram(sine(440, 22050, 1000), a);
    EXPECT_EQ(s.freq_bins(), a.freq_bins());
    EXPECT_EQ(s.time_frames(), a.time_frames());
    EXPECT_EQ(a.time_frames(), 431);
    EXPECT_EQ(log_spectrogram(Waveform{{0.3}, 8000}, cfg).time_frames(), 1);
}

TEST(LogSpectrogram, FramingFormulaOverRandomLengths) {
    auto rng = derive_rng(5, "lengths");
    for (int trial = 0; trial < 1000; ++trial) {
        SpectrogramConfig cfg;
        cfg.n_fft = 1 << (4 + rng.below(4));  // 16..128
        cfg.hop = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_fft)));
        cfg.center_pad = rng.below(2) == 0;
        const std::size_t len = 1 + rng.below(3000);
        const std::size_t expected = cfg.center_pad ? len / cfg.hop + 1
                                     : len <= static_cast<std::size_t>(cfg.n_fft)
                                         ? 1
                                         : (len - cfg.n_fft) / cfg.hop + 1;
        Waveform w{std::vector<double>(len, 0.1), 8000};
        ASSERT_EQ(static_cast<std::size_t>(log_spectrogram(w, cfg).time_frames()), expected)
            << "len " << len << " n_fft " << cfg.n_fft << " hop " << cfg.hop << " center " << cfg.center_pad;
    }
}

TEST(LogSpectrogram, SinePeakMatchesDftOracleEveryInteriorFrame) {
    SpectrogramConfig cfg;
    const auto w = sine(440, 44100, 44100);
    const auto s = log_spectrogram(w, cfg);
    const Eigen::Index frames = s.time_frames();
    for (Eigen::Index t = 1; t + 1 < frames; ++t) {
        Eigen::Index peak;
        s.values.col(t).maxCoeff(&peak);
        ASSERT_EQ(peak, 10) << "frame " << t;
    }
    for (std::size_t t : {0u, 1u, 40u, 86u}) {
        const auto oracle = dft_power(w, cfg, t);
        EXPECT_EQ(argmax(oracle), t == 0 || t == 86 ? argmax(oracle) : 10u);
        for (int k = 0; k < 513; k += 7) {
            const double expect = std::log(std::max(oracle[static_cast<std::size_t>(k)], 1e-10));
            ASSERT_NEAR(s.values(k, static_cast<Eigen::Index>(t)), expect, 1e-6) << "bin " << k << " frame " << t;
        }
    }
}

TEST(LogSpectrogram, PureToneLocalisation) {
    SpectrogramConfig cfg;
    for (double f : {200.0, 1000.0, 3333.0, 9000.0, 15000.0}) {
        const auto s = log_spectrogram(sine(f, 44100, 22050), cfg);
        const auto expected = static_cast<Eigen::Index>(std::lround(f * 1024 / 44100));
        for (Eigen::Index t = 1; t + 1 < s.time_frames(); ++t) {
            Eigen::Index peak;
            s.values.col(t).maxCoeff(&peak);
            ASSERT_LE(std::abs(peak - expected), 1) << f << " Hz frame " << t;
        }
    }
}

TEST(LogSpectrogram, EnergyScalesByTwoLogC) {
    SpectrogramConfig cfg;
    auto rng = derive_rng(1, "noise");
    Waveform w{std::vector<double>(6000), 16000};
    for (auto& x : w.samples) x = rng.normal(0.0, 0.1);
    for (std::size_t i = 0; i < 500; ++i) w.samples[i] = 0.0;  // a stretch at the floor
    const double c = 3.0;
    Waveform big = w;
    for (auto& x : big.samples) x *= c;
    const auto a = log_spectrogram(w, cfg), b = log_spectrogram(big, cfg);
    const double floor = std::log(cfg.log_floor);
    for (Eigen::Index i = 0; i < a.values.size(); ++i) {
        const double x = a.values.data()[i], y = b.values.data()[i];
        ASSERT_GE(y, x);
        if (x > floor) ASSERT_NEAR(y - x, 2.0 * std::log(c), 1e-9);
    }
}

TEST(LogSpectrogram, HopDelayShiftsColumns) {
    SpectrogramConfig cfg;
    auto rng = derive_rng(2, "noise");
    Waveform w{std::vector<double>(8192), 16000};
    for (auto& x : w.samples) x = rng.uniform(-0.5, 0.5);
    Waveform delayed{std::vector<double>(cfg.hop, 0.0), 16000};
    delayed.samples.insert(delayed.samples.end(), w.samples.begin(), w.samples.end());
    const auto a = log_spectrogram(w, cfg), b = log_spectrogram(delayed, cfg);
    for (Eigen::Index t = 2; t + 2 < a.time_frames(); ++t)
        for (Eigen::Index k = 0; k < a.freq_bins(); ++k) ASSERT_NEAR(b.values(k, t + 1), a.values(k, t), 1e-6);
}

TEST(LogSpectrogram, ConfigValidation) {
    SpectrogramConfig cfg;
    cfg.n_fft = 1000;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg = {};
    cfg.hop = 2048;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg = {};
    cfg.log_floor = 0;
    EXPECT_THROW(cfg.validate(), ValidationError);
    EXPECT_THROW(log_spectrogram(Waveform{{}, 8000}, SpectrogramConfig{}), ValidationError);
}

TEST(HannWindow, Periodic) {
    const auto w = hann_window(8);
    EXPECT_DOUBLE_EQ(w[0], 0.0);
    EXPECT_DOUBLE_EQ(w[4], 1.0);
    EXPECT_DOUBLE_EQ(w[2], 0.5);
    EXPECT_DOUBLE_EQ(w[6], 0.5);
}
