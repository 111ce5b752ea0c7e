#include "caplab/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

#include "caplab/error.hpp"
#include "caplab/kernels.hpp"

namespace caplab {

namespace {

constexpr double kPi = 3.14159265358979323846;

uint32_t rd_u32(const unsigned char* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
uint16_t rd_u16(const unsigned char* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

void wr_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8), (unsigned char)(v >> 16),
                          (unsigned char)(v >> 24)};
    os.write(reinterpret_cast<char*>(b), 4);
}
void wr_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {(unsigned char)(v), (unsigned char)(v >> 8)};
    os.write(reinterpret_cast<char*>(b), 2);
}

// In-place iterative radix-2 FFT, n a power of two.
void fft(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / double(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

struct MelTables {
    std::vector<double> hann;                       // 400, periodic
    std::vector<std::vector<double>> filters;       // 80 x 257
    std::vector<double> centers_hz;                 // 80
};

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

const MelTables& mel_tables() {
    static const MelTables t = [] {
        MelTables mt;
        mt.hann.resize(kMelWindow);
        for (int n = 0; n < kMelWindow; ++n)
            mt.hann[size_t(n)] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / kMelWindow);

        const int bins = kMelFft / 2 + 1;
        const double mel_hi = hz_to_mel(kMelRate / 2.0);
        std::vector<double> edges(kMelBands + 2);
        for (int i = 0; i < kMelBands + 2; ++i)
            edges[size_t(i)] = mel_to_hz(mel_hi * i / (kMelBands + 1));
        mt.filters.assign(kMelBands, std::vector<double>(size_t(bins), 0.0));
        mt.centers_hz.resize(kMelBands);
        for (int b = 0; b < kMelBands; ++b) {
            const double fl = edges[size_t(b)], fc = edges[size_t(b) + 1],
                         fr = edges[size_t(b) + 2];
            mt.centers_hz[size_t(b)] = fc;
            for (int k = 0; k < bins; ++k) {
                const double f = double(k) * kMelRate / kMelFft;
                double w = 0.0;
                if (f >= fl && f <= fc && fc > fl)
                    w = (f - fl) / (fc - fl);
                else if (f > fc && f <= fr && fr > fc)
                    w = (fr - f) / (fr - fc);
                mt.filters[size_t(b)][size_t(k)] = std::max(0.0, w);
            }
        }
        return mt;
    }();
    return t;
}

double sinc(double x) {
    if (x == 0.0) return 1.0;
    const double px = kPi * x;
    return std::sin(px) / px;
}

}  // namespace

Waveform read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    unsigned char hdr[12];
    if (!is.read(reinterpret_cast<char*>(hdr), 12) || std::memcmp(hdr, "RIFF", 4) != 0 ||
        std::memcmp(hdr + 8, "WAVE", 4) != 0)
        throw IoError("not a RIFF/WAVE file: " + path);

    bool have_fmt = false;
    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    Waveform w;
    for (;;) {
        unsigned char chunk[8];
        if (!is.read(reinterpret_cast<char*>(chunk), 8)) break;
        const uint32_t size = rd_u32(chunk + 4);
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            std::vector<unsigned char> body(size);
            if (!is.read(reinterpret_cast<char*>(body.data()), size))
                throw IoError("truncated fmt chunk: " + path);
            if (size < 16) throw IoError("short fmt chunk: " + path);
            format = rd_u16(body.data());
            channels = rd_u16(body.data() + 2);
            rate = rd_u32(body.data() + 4);
            bits = rd_u16(body.data() + 14);
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!have_fmt) throw IoError("data chunk before fmt: " + path);
            if (format != 1 || bits != 16)
                throw IoError("only 16-bit PCM is supported: " + path);
            if (channels != 1) throw IoError("only mono audio is supported: " + path);
            if (rate == 0) throw IoError("zero sample rate: " + path);
            std::vector<unsigned char> body(size);
            if (!is.read(reinterpret_cast<char*>(body.data()), size))
                throw IoError("truncated data chunk: " + path);
            const size_t n = size / 2;
            w.samples.resize(n);
            for (size_t i = 0; i < n; ++i) {
                const int16_t s = int16_t(rd_u16(body.data() + 2 * i));
                w.samples[i] = float(s) / 32768.0f;
            }
            w.sample_rate = int(rate);
            return w;
        } else {
            is.seekg(std::streamoff(size + (size & 1)), std::ios::cur);
        }
        if (size & 1) is.seekg(1, std::ios::cur);
    }
    throw IoError("no data chunk found: " + path);
}

void write_wav(const std::string& path, const Waveform& w) {
    if (w.sample_rate <= 0) throw ValueError("write_wav: sample rate must be positive");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    const uint32_t data_bytes = uint32_t(w.samples.size() * 2);
    os.write("RIFF", 4);
    wr_u32(os, 36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    wr_u32(os, 16);
    wr_u16(os, 1);  // PCM
    wr_u16(os, 1);  // mono
    wr_u32(os, uint32_t(w.sample_rate));
    wr_u32(os, uint32_t(w.sample_rate) * 2);
    wr_u16(os, 2);
    wr_u16(os, 16);
    os.write("data", 4);
    wr_u32(os, data_bytes);
    for (float s : w.samples) {
        const double v = std::clamp(double(s), -1.0, 1.0);
        const int q = int(std::lrint(v * 32767.0));
        wr_u16(os, uint16_t(int16_t(q)));
    }
    if (!os) throw IoError("write failed: " + path);
}

Waveform resample(const Waveform& w, int target_rate) {
    if (w.sample_rate <= 0 || target_rate <= 0)
        throw ValueError("resample: rates must be positive");
    if (target_rate == w.sample_rate) return w;
    Waveform out;
    out.sample_rate = target_rate;
    if (w.samples.empty()) return out;

    const double r = double(target_rate) / double(w.sample_rate);
    const int64_t n = int64_t(w.samples.size());
    const int64_t m = int64_t(std::llround(double(n) * r));
    out.samples.resize(size_t(m));

    const double fc = 0.45 * std::min(1.0, r);       // cycles per input sample
    const double half = 32.0 * std::max(1.0, 1.0 / r);  // input samples per side

#pragma omp parallel for schedule(static) num_threads(kernels::threads()) if (m > 4096 && kernels::threads() > 1)
    for (int64_t i = 0; i < m; ++i) {
        const double t = double(i) / r;  // position in input samples
        const int64_t k0 = std::max<int64_t>(0, int64_t(std::ceil(t - half)));
        const int64_t k1 = std::min<int64_t>(n - 1, int64_t(std::floor(t + half)));
        double acc = 0.0, wsum = 0.0;
        for (int64_t k = k0; k <= k1; ++k) {
            const double x = double(k) - t;
            const double win = 0.5 * (1.0 + std::cos(kPi * x / half));
            const double h = 2.0 * fc * sinc(2.0 * fc * x) * win;
            acc += double(w.samples[size_t(k)]) * h;
            wsum += h;
        }
        out.samples[size_t(i)] = float(wsum != 0.0 ? acc / wsum : 0.0);
    }
    return out;
}

int64_t mel_frame_count(int64_t n_samples) {
    if (n_samples < kMelWindow)
        throw ValueError("log_mel: input too short, " + std::to_string(n_samples) + " < " +
                         std::to_string(kMelWindow) + " samples");
    return (n_samples - kMelWindow) / kMelHop + 1;
}

std::vector<double> mel_energies(const Waveform& w) {
    if (w.sample_rate != kMelRate)
        throw ValueError("log_mel: expected " + std::to_string(kMelRate) + " Hz input, got " +
                         std::to_string(w.sample_rate));
    const int64_t T = mel_frame_count(int64_t(w.samples.size()));
    const auto& mt = mel_tables();
    const int bins = kMelFft / 2 + 1;
    std::vector<double> out(size_t(T) * kMelBands);

#pragma omp parallel for schedule(static) num_threads(kernels::threads()) if (T > 16 && kernels::threads() > 1)
    for (int64_t f = 0; f < T; ++f) {
        std::vector<std::complex<double>> buf(kMelFft, {0.0, 0.0});
        const size_t base = size_t(f) * kMelHop;
        for (int j = 0; j < kMelWindow; ++j)
            buf[size_t(j)] = {double(w.samples[base + size_t(j)]) * mt.hann[size_t(j)], 0.0};
        fft(buf);
        double power[kMelFft / 2 + 1];
        for (int k = 0; k < bins; ++k)
            power[k] = buf[size_t(k)].real() * buf[size_t(k)].real() +
                       buf[size_t(k)].imag() * buf[size_t(k)].imag();
        for (int b = 0; b < kMelBands; ++b) {
            const auto& flt = mt.filters[size_t(b)];
            double e = 0.0;
            for (int k = 0; k < bins; ++k) e += flt[size_t(k)] * power[k];
            out[size_t(f) * kMelBands + size_t(b)] = e;
        }
    }
    return out;
}

Tensor log_mel(const Waveform& w) {
    const auto e = mel_energies(w);
    const int64_t T = int64_t(e.size()) / kMelBands;
    auto out = Tensor::zeros({int(T), kMelBands});
    for (size_t i = 0; i < e.size(); ++i)
        out.data()[i] = float(std::log(std::max(e[i], kMelFloor)));
    return out;
}

std::vector<std::vector<double>> mel_filter_bank() { return mel_tables().filters; }

std::vector<double> mel_band_centers_hz() { return mel_tables().centers_hz; }

}  // namespace caplab
