#pragma once

#include <cstdint>
#include <string>

// Synthetic audio-caption corpus: small WAV clips whose captions verbalize the
// generator parameters, so audio-text correspondence is learnable.

namespace caplab {

struct SyntheticSpec {
    int n_pairs = 64;
    uint64_t seed = 0;
    // generator mix; normalized internally
    double p_tone = 0.30;
    double p_chirp = 0.25;
    double p_noise = 0.20;
    double p_seq = 0.25;
    // fraction of clips that get a second caption style (exercises
    // consolidation downstream)
    double multi_caption_rate = 0.15;
    // tones and chirps draw their length from this range; bursts and note
    // sequences derive theirs from event count and tempo
    double dur_min = 0.5;
    double dur_max = 2.0;
    int sample_rate = 16000;
};

struct GenResult {
    std::string manifest_path;
    int n_clips = 0;
    int n_caption_lines = 0;
};

// Writes out_dir/audio/<id>.wav clips plus out_dir/manifest.jsonl. Same spec
// (seed included) produces byte-identical manifests.
GenResult gen_synthetic_corpus(const SyntheticSpec& spec, const std::string& out_dir);

// "tone-low-017" -> kind "tone" / band "low"; used for probe labels
std::string synth_kind(const std::string& audio_id);
std::string synth_band(const std::string& audio_id);

}  // namespace caplab
