#include "caplab/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "caplab/audio.hpp"
#include "caplab/error.hpp"
#include "caplab/rng.hpp"

namespace caplab {

namespace {

constexpr double kPi = 3.14159265358979323846;

const char* kNumberWord[] = {"zero", "one", "two", "three", "four", "five"};

struct Clip {
    std::string id;
    std::vector<float> samples;
    std::vector<std::string> captions;
};

std::string seq_id(const std::string& kind, const std::string& band, int n) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03d", n);
    return kind + "-" + band + "-" + buf;
}

std::vector<float> render_tone(double freq, bool fading, int n, int sr) {
    std::vector<float> s(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t) {
        double env = fading ? 1.0 - double(t) / n : 1.0;
        s[size_t(t)] = float(0.5 * env * std::sin(2.0 * kPi * freq * t / sr));
    }
    return s;
}

std::vector<float> render_chirp(double f0, double f1, int n, int sr) {
    std::vector<float> s(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t) {
        double frac = double(t) / n;
        double phase = 2.0 * kPi * (f0 * t + 0.5 * (f1 - f0) * frac * t) / sr;
        s[size_t(t)] = float(0.5 * std::sin(phase));
    }
    return s;
}

std::vector<float> render_bursts(int count, double gap_s, int sr, Rng& rng) {
    const int burst = int(0.25 * sr), gap = int(gap_s * sr);
    const int n = count * burst + (count + 1) * gap;
    std::vector<float> s(size_t(n), 0.0f);
    for (int b = 0; b < count; ++b) {
        int start = gap + b * (burst + gap);
        for (int t = 0; t < burst; ++t)
            s[size_t(start + t)] = float(0.3 * rng.normal());
    }
    return s;
}

std::vector<float> render_notes(int count, bool fast, double base_freq, int sr) {
    const double rate = fast ? 4.0 : 1.5;  // notes per second
    const int slot = int(sr / rate);
    const int n = count * slot;
    std::vector<float> s(size_t(n), 0.0f);
    for (int k = 0; k < count; ++k) {
        double f = base_freq * (1.0 + 0.1 * k);  // small upward walk
        int start = k * slot, dur = int(slot * 0.7);
        for (int t = 0; t < dur; ++t)
            s[size_t(start + t)] = float(0.5 * std::sin(2.0 * kPi * f * t / sr));
    }
    return s;
}

std::string hz_phrase(double freq) { return std::to_string(llround(freq)) + " hertz"; }

Clip make_clip(const SyntheticSpec& spec, Rng& rng, int index) {
    double total = spec.p_tone + spec.p_chirp + spec.p_noise + spec.p_seq;
    if (total <= 0.0) throw ValueError("gen_synthetic_corpus: generator mix sums to zero");
    double roll = rng.next_double() * total;
    bool high = rng.next_below(2) == 1;
    const std::string band = high ? "high" : "low";
    double freq = high ? rng.uniform(2000.0, 4000.0) : rng.uniform(200.0, 500.0);
    bool second_caption = rng.next_double() < spec.multi_caption_rate;

    // every caption verbalizes the clip's drawn parameters (frequency, gap)
    // so text identifies audio nearly uniquely even in large batches
    Clip clip;
    if (roll < spec.p_tone) {
        bool fading = rng.next_below(2) == 1;
        int n = int(rng.uniform(spec.dur_min, spec.dur_max) * spec.sample_rate);
        clip.id = seq_id("tone", band, index);
        clip.samples = render_tone(freq, fading, n, spec.sample_rate);
        clip.captions.push_back(std::string("a ") + (fading ? "fading" : "steady") + " " + band +
                                " tone near " + hz_phrase(freq));
        if (second_caption)
            clip.captions.push_back(band + " pitched tone at " + hz_phrase(freq) + " " +
                                    (fading ? "fading away" : "holding steady"));
    } else if (roll < spec.p_tone + spec.p_chirp) {
        bool rising = rng.next_below(2) == 1;
        int n = int(rng.uniform(spec.dur_min, spec.dur_max) * spec.sample_rate);
        double f0 = rising ? freq * 0.5 : freq * 1.5;
        double f1 = rising ? freq * 1.5 : freq * 0.5;
        clip.id = seq_id("chirp", band, index);
        clip.samples = render_chirp(f0, f1, n, spec.sample_rate);
        clip.captions.push_back(std::string("a ") + (rising ? "rising" : "falling") + " " + band +
                                " chirp around " + hz_phrase(freq));
        if (second_caption)
            clip.captions.push_back(band + " chirp around " + hz_phrase(freq) + " sweeping " +
                                    (rising ? "upward" : "downward"));
    } else if (roll < spec.p_tone + spec.p_chirp + spec.p_noise) {
        int count = 1 + int(rng.next_below(4));
        double gap_s = rng.uniform(0.12, 0.32);
        clip.id = seq_id("noise", band, index);
        clip.samples = render_bursts(count, gap_s, spec.sample_rate, rng);
        const std::string gap_ms = std::to_string(llround(gap_s * 1000.0));
        clip.captions.push_back(std::string(kNumberWord[count]) + " short noise " +
                                (count == 1 ? "burst" : "bursts") + " spaced " + gap_ms +
                                " milliseconds apart");
        if (second_caption)
            clip.captions.push_back(std::string("a run of ") + kNumberWord[count] +
                                    " noisy bursts with " + gap_ms + " millisecond gaps");
    } else {
        int count = 2 + int(rng.next_below(4));
        bool fast = rng.next_below(2) == 1;
        clip.id = seq_id("seq", band, index);
        clip.samples = render_notes(count, fast, freq, spec.sample_rate);
        clip.captions.push_back(std::string("a ") + (fast ? "fast" : "slow") + " sequence of " +
                                kNumberWord[count] + " " + band + " notes from " +
                                hz_phrase(freq));
        if (second_caption)
            clip.captions.push_back(std::string(kNumberWord[count]) + " " + band +
                                    " notes from " + hz_phrase(freq) + " played " +
                                    (fast ? "quickly" : "slowly"));
    }
    return clip;
}

}  // namespace

GenResult gen_synthetic_corpus(const SyntheticSpec& spec, const std::string& out_dir) {
    if (spec.n_pairs < 1) throw ValueError("gen_synthetic_corpus: n_pairs must be positive");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "audio", ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    Rng rng(spec.seed);
    GenResult res;
    res.manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
    std::ofstream manifest(res.manifest_path, std::ios::binary);
    if (!manifest) throw IoError("cannot write " + res.manifest_path);

    for (int i = 0; i < spec.n_pairs; ++i) {
        Clip clip = make_clip(spec, rng, i);
        const std::string wav_rel = "audio/" + clip.id + ".wav";
        const std::string wav_path = (fs::path(out_dir) / wav_rel).string();
        Waveform w;
        w.samples = clip.samples;
        w.sample_rate = spec.sample_rate;
        write_wav(wav_path, w);

        double duration = double(clip.samples.size()) / spec.sample_rate;
        for (const auto& caption : clip.captions) {
            nlohmann::json line = {{"audio_id", clip.id}, {"audio_path", wav_path},
                                   {"duration", duration}, {"source", "synth"},
                                   {"domain", "sound"},   {"caption", caption}};
            manifest << line.dump() << "\n";
            ++res.n_caption_lines;
        }
        ++res.n_clips;
    }
    manifest.flush();
    if (!manifest) throw IoError("failed writing " + res.manifest_path);
    return res;
}

std::string synth_kind(const std::string& audio_id) {
    auto dash = audio_id.find('-');
    if (dash == std::string::npos) throw ValueError("not a synthetic id: " + audio_id);
    return audio_id.substr(0, dash);
}

std::string synth_band(const std::string& audio_id) {
    auto first = audio_id.find('-');
    auto second = first == std::string::npos ? first : audio_id.find('-', first + 1);
    if (second == std::string::npos) throw ValueError("not a synthetic id: " + audio_id);
    return audio_id.substr(first + 1, second - first - 1);
}

}  // namespace caplab
