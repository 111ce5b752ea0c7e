#include "caplab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "caplab/error.hpp"
#include "caplab/rng.hpp"

namespace caplab {

namespace {

using nlohmann::json;

const std::set<std::string> kDomains = {"sound", "speech", "music"};

bool parse_line(const std::string& line, CaptionRecord& out) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return false;
    if (!j.contains("audio_id") || !j["audio_id"].is_string()) return false;
    if (!j.contains("audio_path") || !j["audio_path"].is_string()) return false;
    if (!j.contains("duration") || !j["duration"].is_number()) return false;
    if (!j.contains("source") || !j["source"].is_string()) return false;
    if (!j.contains("domain") || !j["domain"].is_string()) return false;
    if (!j.contains("caption") || !j["caption"].is_string()) return false;
    out.audio_id = j["audio_id"].get<std::string>();
    out.audio_path = j["audio_path"].get<std::string>();
    out.duration = j["duration"].get<double>();
    out.source = j["source"].get<std::string>();
    out.domain = j["domain"].get<std::string>();
    out.captions = {j["caption"].get<std::string>()};
    if (out.audio_id.empty()) return false;
    if (out.duration <= 0.0) return false;
    if (!kDomains.count(out.domain)) return false;
    return true;
}

std::vector<std::string> split_sources(const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == '+') {
            if (!cur.empty()) parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) parts.push_back(cur);
    return parts;
}

}  // namespace

IngestReport ingest(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open manifest: " + manifest_path);
    IngestReport rep;
    std::string line;
    while (std::getline(is, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++rep.lines;
        CaptionRecord rec;
        if (parse_line(line, rec))
            rep.records.push_back(std::move(rec));
        else
            ++rep.skipped;
    }
    if (rep.lines > 0 && rep.skipped * 2 > rep.lines)
        throw IoError("corrupt manifest: " + std::to_string(rep.skipped) + " of " +
                      std::to_string(rep.lines) + " lines malformed in " + manifest_path);
    return rep;
}

void write_manifest(const std::string& path, const std::vector<CaptionRecord>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    for (const auto& r : records) {
        for (const auto& cap : r.captions) {
            json j;
            j["audio_id"] = r.audio_id;
            j["audio_path"] = r.audio_path;
            j["duration"] = r.duration;
            j["source"] = r.source;
            j["domain"] = r.domain;
            j["caption"] = cap;
            os << j.dump() << "\n";
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

std::vector<CaptionRecord> consolidate(const std::vector<CaptionRecord>& records) {
    std::vector<CaptionRecord> out;
    std::unordered_map<std::string, size_t> index;
    std::unordered_map<std::string, std::set<std::string>> sources;
    std::unordered_map<std::string, std::unordered_set<std::string>> seen_caps;
    for (const auto& r : records) {
        auto it = index.find(r.audio_id);
        if (it == index.end()) {
            index[r.audio_id] = out.size();
            out.push_back(r);
            out.back().captions.clear();
            auto& merged = out.back();
            auto& caps = seen_caps[r.audio_id];
            for (const auto& c : r.captions)
                if (caps.insert(c).second) merged.captions.push_back(c);
            for (const auto& s : split_sources(r.source)) sources[r.audio_id].insert(s);
        } else {
            auto& merged = out[it->second];
            if (std::abs(merged.duration - r.duration) > 0.1)
                throw ValueError("conflicting durations for audio_id " + r.audio_id + ": " +
                                 std::to_string(merged.duration) + " vs " +
                                 std::to_string(r.duration));
            auto& caps = seen_caps[r.audio_id];
            for (const auto& c : r.captions)
                if (caps.insert(c).second) merged.captions.push_back(c);
            for (const auto& s : split_sources(r.source)) sources[r.audio_id].insert(s);
        }
    }
    for (auto& r : out) {
        const auto& set = sources[r.audio_id];
        std::string joined;
        for (const auto& s : set) {
            if (!joined.empty()) joined += "+";
            joined += s;
        }
        r.source = joined;
    }
    return out;
}

FilterReport filter_corpus(const std::vector<CaptionRecord>& records, double max_duration,
                           const std::set<std::string>& blocklist) {
    if (max_duration <= 0.0) throw ValueError("filter_corpus: max_duration must be positive");
    FilterReport rep;
    for (const auto& r : records) {
        if (r.duration > max_duration) {
            ++rep.dropped_duration;
        } else if (blocklist.count(r.audio_id)) {
            ++rep.dropped_overlap;
        } else {
            rep.kept.push_back(r);
        }
    }
    return rep;
}

std::vector<std::vector<CaptionRecord>> sample_subsets(const std::vector<CaptionRecord>& records,
                                                       const std::vector<int64_t>& sizes,
                                                       uint64_t seed) {
    for (size_t i = 1; i < sizes.size(); ++i)
        if (sizes[i] < sizes[i - 1]) throw ValueError("sample_subsets: sizes must be ascending");
    if (!sizes.empty() && sizes.back() > int64_t(records.size()))
        throw ValueError("sample_subsets: size " + std::to_string(sizes.back()) +
                         " exceeds corpus of " + std::to_string(records.size()));
    std::vector<CaptionRecord> shuffled = records;
    Rng rng(Rng::derive(seed, "subset-shuffle"));
    rng.shuffle(shuffled);
    std::vector<std::vector<CaptionRecord>> out;
    for (int64_t s : sizes)
        out.emplace_back(shuffled.begin(), shuffled.begin() + std::ptrdiff_t(s));
    return out;
}

std::vector<std::string> stat_words(const std::string& caption) {
    std::string cleaned;
    cleaned.reserve(caption.size());
    for (unsigned char c : caption) {
        if (std::ispunct(c)) continue;
        cleaned += char(std::tolower(c));
    }
    std::vector<std::string> words;
    std::istringstream is(cleaned);
    std::string w;
    while (is >> w) words.push_back(w);
    return words;
}

CorpusStats lexical_stats(const std::vector<CaptionRecord>& records) {
    if (records.empty()) throw ValueError("lexical_stats: empty corpus");
    CorpusStats st;
    std::unordered_set<std::string> vocab;
    std::unordered_set<std::string> grams[4];
    int64_t totals[4] = {0, 0, 0, 0};
    int64_t total_words = 0;
    for (const auto& r : records) {
        for (const auto& cap : r.captions) {
            ++st.n_pairs;
            const auto words = stat_words(cap);
            total_words += int64_t(words.size());
            for (const auto& w : words) vocab.insert(w);
            for (int n = 1; n <= 4; ++n) {
                if (int(words.size()) < n) continue;
                for (size_t i = 0; i + size_t(n) <= words.size(); ++i) {
                    std::string key;
                    for (int k = 0; k < n; ++k) {
                        if (k) key += '\x1f';
                        key += words[i + size_t(k)];
                    }
                    grams[n - 1].insert(std::move(key));
                    ++totals[n - 1];
                }
            }
        }
    }
    if (st.n_pairs == 0) throw ValueError("lexical_stats: corpus has no captions");
    st.n_vocab = int64_t(vocab.size());
    st.avg_sent = double(total_words) / double(st.n_pairs);
    for (int n = 1; n <= 4; ++n)
        st.distinct_n[n] =
            totals[n - 1] == 0 ? 1.0 : double(grams[n - 1].size()) / double(totals[n - 1]);
    return st;
}

std::set<std::string> read_blocklist(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open blocklist: " + path);
    std::set<std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
            line.pop_back();
        size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        out.insert(line.substr(start));
    }
    return out;
}

std::string stats_to_json(const CorpusStats& s) {
    json j;
    j["n_pairs"] = s.n_pairs;
    j["n_vocab"] = s.n_vocab;
    j["avg_sent"] = s.avg_sent;
    json d;
    for (const auto& [n, v] : s.distinct_n) d["distinct_" + std::to_string(n)] = v;
    j["distinct_n"] = d;
    return j.dump(2);
}

}  // namespace caplab
