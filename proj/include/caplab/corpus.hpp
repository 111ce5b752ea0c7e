#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace caplab {

struct CaptionRecord {
    std::string audio_id;
    std::string audio_path;
    double duration = 0.0;  // seconds
    std::string source;
    std::string domain;  // sound | speech | music
    std::vector<std::string> captions;
};

struct IngestReport {
    std::vector<CaptionRecord> records;
    int64_t skipped = 0;  // malformed lines
    int64_t lines = 0;    // non-empty lines seen
};

struct FilterReport {
    std::vector<CaptionRecord> kept;
    int64_t dropped_duration = 0;
    int64_t dropped_overlap = 0;
};

struct CorpusStats {
    int64_t n_pairs = 0;  // total captions
    int64_t n_vocab = 0;  // unique words
    double avg_sent = 0.0;
    std::map<int, double> distinct_n;  // n in 1..4
};

// One JSON object per line: audio_id, audio_path, duration, source, domain,
// caption. Malformed lines are skipped and counted; more than half malformed
// is treated as a corrupt file.
IngestReport ingest(const std::string& manifest_path);

// Write one line per (record, caption); re-ingesting and consolidating the
// output reproduces the records.
void write_manifest(const std::string& path, const std::vector<CaptionRecord>& records);

// Merge records sharing audio_id: captions concatenate in ingestion order and
// deduplicate exactly; source becomes the sorted "+"-joined union. Durations
// differing by more than 0.1 s for one id are a consistency error.
std::vector<CaptionRecord> consolidate(const std::vector<CaptionRecord>& records);

FilterReport filter_corpus(const std::vector<CaptionRecord>& records, double max_duration,
                           const std::set<std::string>& blocklist);

// Seeded shuffle; subset k is the first sizes[k] records, so subsets nest.
std::vector<std::vector<CaptionRecord>> sample_subsets(const std::vector<CaptionRecord>& records,
                                                       const std::vector<int64_t>& sizes,
                                                       uint64_t seed);

// Corpus-wide lexical diversity. Words: ASCII-lowercased, ASCII punctuation
// stripped, whitespace-split.
CorpusStats lexical_stats(const std::vector<CaptionRecord>& records);

std::vector<std::string> stat_words(const std::string& caption);

std::set<std::string> read_blocklist(const std::string& path);

std::string stats_to_json(const CorpusStats& s);

}  // namespace caplab
