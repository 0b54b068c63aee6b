#include "engen/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace engen {

namespace {

constexpr double kPi = 3.14159265358979323846;

uint32_t rd_u32(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
uint16_t rd_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

} // namespace

Waveform load_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open wav file: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw DataError("not a RIFF/WAVE file: " + path);

    int fmt_code = -1, channels = 0, bits = 0;
    uint32_t rate = 0;
    size_t data_off = 0, data_len = 0;
    size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        uint32_t chunk_len = rd_u32(buf.data() + pos + 4);
        const uint8_t* body = buf.data() + pos + 8;
        if (pos + 8 + chunk_len > buf.size()) chunk_len = uint32_t(buf.size() - pos - 8);
        if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0 && chunk_len >= 16) {
            fmt_code = rd_u16(body);
            channels = rd_u16(body + 2);
            rate = rd_u32(body + 4);
            bits = rd_u16(body + 14);
            if (fmt_code == 0xFFFE && chunk_len >= 40) fmt_code = rd_u16(body + 24);
        } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
            data_off = pos + 8;
            data_len = chunk_len;
        }
        pos += 8 + chunk_len + (chunk_len & 1);
    }
    if (fmt_code < 0 || data_off == 0) throw DataError("wav missing fmt/data chunk: " + path);
    if (channels < 1 || channels > 2)
        throw DataError("unsupported channel count " + std::to_string(channels) + ": " + path);
    bool pcm16 = fmt_code == 1 && bits == 16;
    bool f32 = fmt_code == 3 && bits == 32;
    if (!pcm16 && !f32)
        throw DataError("unsupported wav encoding (want PCM16 or float32): " + path);

    size_t bytes_per_sample = size_t(bits) / 8;
    size_t n_frames = data_len / (bytes_per_sample * size_t(channels));
    if (n_frames == 0) throw DataError("wav contains no audio: " + path);

    Waveform w;
    w.sample_rate = int(rate);
    w.samples.resize(n_frames);
    const uint8_t* d = buf.data() + data_off;
    for (size_t i = 0; i < n_frames; ++i) {
        float acc = 0.0f;
        for (int c = 0; c < channels; ++c) {
            const uint8_t* s = d + (i * size_t(channels) + size_t(c)) * bytes_per_sample;
            if (pcm16) {
                int16_t v = int16_t(rd_u16(s));
                acc += float(v) / 32768.0f;
            } else {
                float v;
                std::memcpy(&v, s, 4);
                acc += v;
            }
        }
        w.samples[i] = acc / float(channels);
    }
    for (float s : w.samples)
        if (!std::isfinite(s)) throw DataError("wav contains non-finite samples: " + path);

    // peak scale into [-1, 1]
    float peak = 0.0f;
    for (float s : w.samples) peak = std::max(peak, std::abs(s));
    if (peak > 1.0f)
        for (float& s : w.samples) s /= peak;

    if (w.sample_rate != kSampleRate) w = resample(w, kSampleRate);
    return w;
}

void save_wav(const std::string& path, const Waveform& w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write wav file: " + path);
    uint32_t n = uint32_t(w.samples.size());
    uint32_t data_len = n * 2;
    uint32_t riff_len = 36 + data_len;
    uint32_t rate = uint32_t(w.sample_rate);
    uint32_t byte_rate = rate * 2;
    uint8_t hdr[44];
    std::memcpy(hdr, "RIFF", 4);
    std::memcpy(hdr + 4, &riff_len, 4);
    std::memcpy(hdr + 8, "WAVEfmt ", 8);
    uint32_t fmt_len = 16;
    std::memcpy(hdr + 16, &fmt_len, 4);
    uint16_t fmt_code = 1, channels = 1, block_align = 2, bits = 16;
    std::memcpy(hdr + 20, &fmt_code, 2);
    std::memcpy(hdr + 22, &channels, 2);
    std::memcpy(hdr + 24, &rate, 4);
    std::memcpy(hdr + 28, &byte_rate, 4);
    std::memcpy(hdr + 32, &block_align, 2);
    std::memcpy(hdr + 34, &bits, 2);
    std::memcpy(hdr + 36, "data", 4);
    std::memcpy(hdr + 40, &data_len, 4);
    f.write(reinterpret_cast<const char*>(hdr), 44);
    for (float s : w.samples) {
        float c = std::clamp(s, -1.0f, 1.0f);
        int16_t v = int16_t(std::lround(c * 32767.0f));
        f.write(reinterpret_cast<const char*>(&v), 2);
    }
}

Waveform resample(const Waveform& w, int dst_rate) {
    if (w.sample_rate <= 0) throw DataError("resample: invalid source rate");
    if (w.sample_rate == dst_rate) return w;
    const int src_rate = w.sample_rate;
    const int64_t n_in = int64_t(w.samples.size());
    const int64_t n_out = llround(double(n_in) * dst_rate / src_rate);
    // cutoff relative to input Nyquist; widen the kernel when downsampling
    const double fc = std::min(1.0, double(dst_rate) / src_rate) * 0.945;
    const double half_width = 16.0 / fc;
    Waveform out;
    out.sample_rate = dst_rate;
    out.samples.resize(size_t(n_out));
    for (int64_t i = 0; i < n_out; ++i) {
        double t = double(i) * src_rate / dst_rate;
        int64_t k0 = int64_t(std::ceil(t - half_width));
        int64_t k1 = int64_t(std::floor(t + half_width));
        k0 = std::max<int64_t>(k0, 0);
        k1 = std::min<int64_t>(k1, n_in - 1);
        double acc = 0.0;
        for (int64_t k = k0; k <= k1; ++k) {
            double u = double(k) - t;
            double x = kPi * fc * u;
            double sinc = x == 0.0 ? 1.0 : std::sin(x) / x;
            double win = 0.5 * (1.0 + std::cos(kPi * u / half_width));
            acc += double(w.samples[size_t(k)]) * fc * sinc * win;
        }
        out.samples[size_t(i)] = float(std::clamp(acc, -1.0, 1.0));
    }
    return out;
}

Waveform random_crop(const Waveform& w, double min_s, double max_s, Rng& rng) {
    if (min_s > max_s) throw UsageError("random_crop: min_s > max_s");
    int64_t n = int64_t(w.samples.size());
    int64_t min_n = llround(min_s * w.sample_rate);
    if (n <= min_n) return w;
    int64_t max_n = std::min<int64_t>(llround(max_s * w.sample_rate), n);
    int64_t len = rng.uniform_int(min_n, max_n);
    int64_t off = rng.uniform_int(0, n - len);
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.assign(w.samples.begin() + off, w.samples.begin() + off + len);
    return out;
}

void fft_inplace(std::vector<float>& re, std::vector<float>& im, bool inverse) {
    const size_t n = re.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * kPi / double(len) * (inverse ? 1.0 : -1.0);
        float wr = float(std::cos(ang)), wi = float(std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            float cr = 1.0f, ci = 0.0f;
            for (size_t k = 0; k < len / 2; ++k) {
                size_t a = i + k, b = i + k + len / 2;
                float xr = re[b] * cr - im[b] * ci;
                float xi = re[b] * ci + im[b] * cr;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
                float ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
    if (inverse) {
        float inv = 1.0f / float(n);
        for (size_t i = 0; i < n; ++i) {
            re[i] *= inv;
            im[i] *= inv;
        }
    }
}

const std::vector<float>& hann_window() {
    static const std::vector<float> win = [] {
        std::vector<float> w(kFftSize);
        for (int i = 0; i < kFftSize; ++i)
            w[size_t(i)] = float(0.5 * (1.0 - std::cos(2.0 * kPi * i / kFftSize)));
        return w;
    }();
    return win;
}

const std::vector<float>& mel_filterbank() {
    static const std::vector<float> fb = [] {
        const int n_bins = kFftSize / 2 + 1;
        auto hz_to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
        auto mel_to_hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };
        const double mel_lo = hz_to_mel(0.0);
        const double mel_hi = hz_to_mel(kSampleRate / 2.0);
        std::vector<double> hz(kNumMels + 2);
        for (int i = 0; i < kNumMels + 2; ++i)
            hz[size_t(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kNumMels + 1));
        std::vector<float> f(size_t(kNumMels) * size_t(n_bins), 0.0f);
        for (int m = 0; m < kNumMels; ++m) {
            double left = hz[size_t(m)], center = hz[size_t(m) + 1], right = hz[size_t(m) + 2];
            for (int k = 0; k < n_bins; ++k) {
                double freq = double(k) * kSampleRate / kFftSize;
                double v = 0.0;
                if (freq >= left && freq <= center && center > left)
                    v = (freq - left) / (center - left);
                else if (freq > center && freq <= right && right > center)
                    v = (right - freq) / (right - center);
                f[size_t(m) * size_t(n_bins) + size_t(k)] = float(v);
            }
        }
        return f;
    }();
    return fb;
}

MelSpectrogram mel_spectrogram(const Waveform& w) {
    if (w.sample_rate != kSampleRate)
        throw DataError("mel_spectrogram expects 22050 Hz input");
    const int64_t n = int64_t(w.samples.size());
    const int n_frames = int(1 + (n >= 0 ? n / kHop : 0));
    const int n_bins = kFftSize / 2 + 1;
    const auto& win = hann_window();
    const auto& fb = mel_filterbank();

    MelSpectrogram mel;
    mel.frames = Tensor<float>({n_frames, kNumMels});
    std::vector<float> re(kFftSize), im(kFftSize), power(static_cast<size_t>(n_bins));
    for (int t = 0; t < n_frames; ++t) {
        int64_t center = int64_t(t) * kHop;
        int64_t start = center - kFftSize / 2;
        for (int i = 0; i < kFftSize; ++i) {
            int64_t idx = start + i;
            float s = (idx >= 0 && idx < n) ? w.samples[size_t(idx)] : 0.0f;
            re[size_t(i)] = s * win[size_t(i)];
            im[size_t(i)] = 0.0f;
        }
        fft_inplace(re, im, false);
        for (int k = 0; k < n_bins; ++k)
            power[size_t(k)] = re[size_t(k)] * re[size_t(k)] + im[size_t(k)] * im[size_t(k)];
        float* out = mel.frames.row(t);
        for (int m = 0; m < kNumMels; ++m) {
            const float* fr = &fb[size_t(m) * size_t(n_bins)];
            float acc = 0.0f;
            for (int k = 0; k < n_bins; ++k) acc += fr[k] * power[size_t(k)];
            out[m] = std::log(std::max(acc, kLogFloor));
        }
    }
    return mel;
}

} // namespace engen
