#include "caplab/bpe.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "caplab/error.hpp"

namespace caplab {

namespace {

// GPT-2-style byte<->printable-codepoint map so merge tokens (which may
// contain spaces or control bytes) survive a line-oriented text file.
const std::vector<uint32_t>& byte_to_cp() {
    static const std::vector<uint32_t> table = [] {
        std::vector<uint32_t> t(256);
        std::vector<bool> printable(256, false);
        for (int b = 0x21; b <= 0x7e; ++b) printable[size_t(b)] = true;
        for (int b = 0xa1; b <= 0xac; ++b) printable[size_t(b)] = true;
        for (int b = 0xae; b <= 0xff; ++b) printable[size_t(b)] = true;
        uint32_t next = 256;
        for (int b = 0; b < 256; ++b)
            t[size_t(b)] = printable[size_t(b)] ? uint32_t(b) : next++;
        return t;
    }();
    return table;
}

std::string cp_to_utf8(uint32_t cp) {
    std::string s;
    if (cp < 0x80) {
        s += char(cp);
    } else if (cp < 0x800) {
        s += char(0xc0 | (cp >> 6));
        s += char(0x80 | (cp & 0x3f));
    } else {
        s += char(0xe0 | (cp >> 12));
        s += char(0x80 | ((cp >> 6) & 0x3f));
        s += char(0x80 | (cp & 0x3f));
    }
    return s;
}

std::string bytes_to_printable(const std::string& raw) {
    std::string out;
    for (unsigned char b : raw) out += cp_to_utf8(byte_to_cp()[b]);
    return out;
}

std::string printable_to_bytes(const std::string& text) {
    static const std::unordered_map<uint32_t, unsigned char> inverse = [] {
        std::unordered_map<uint32_t, unsigned char> m;
        for (int b = 0; b < 256; ++b) m[byte_to_cp()[size_t(b)]] = (unsigned char)(b);
        return m;
    }();
    std::string out;
    size_t i = 0;
    while (i < text.size()) {
        const unsigned char c = (unsigned char)(text[i]);
        uint32_t cp = 0;
        size_t len = 1;
        if (c < 0x80) {
            cp = c;
        } else if ((c >> 5) == 0x6) {
            len = 2;
            if (i + 1 >= text.size()) throw IoError("vocab file: truncated UTF-8");
            cp = uint32_t(c & 0x1f) << 6 | (text[i + 1] & 0x3f);
        } else if ((c >> 4) == 0xe) {
            len = 3;
            if (i + 2 >= text.size()) throw IoError("vocab file: truncated UTF-8");
            cp = uint32_t(c & 0x0f) << 12 | uint32_t(text[i + 1] & 0x3f) << 6 |
                 (text[i + 2] & 0x3f);
        } else {
            throw IoError("vocab file: invalid UTF-8 byte");
        }
        auto it = inverse.find(cp);
        if (it == inverse.end()) throw IoError("vocab file: unmapped code point");
        out += char(it->second);
        i += len;
    }
    return out;
}

std::vector<int> to_byte_ids(const std::string& text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char b : text) ids.push_back(BpeVocab::kByteBase + int(b));
    return ids;
}

// Replace non-overlapping (l, r) occurrences left to right with `id`.
void apply_merge(std::vector<int>& seq, int l, int r, int id) {
    size_t w = 0;
    for (size_t i = 0; i < seq.size();) {
        if (i + 1 < seq.size() && seq[i] == l && seq[i + 1] == r) {
            seq[w++] = id;
            i += 2;
        } else {
            seq[w++] = seq[i++];
        }
    }
    seq.resize(w);
}

}  // namespace

void BpeVocab::rebuild_bytes() {
    bytes_.assign(size_t(size()), std::string());
    for (int b = 0; b < 256; ++b) bytes_[size_t(kByteBase + b)] = std::string(1, char(b));
    for (size_t m = 0; m < merges_.size(); ++m) {
        const auto& [l, r] = merges_[m];
        bytes_[size_t(kBaseVocab) + m] = bytes_[size_t(l)] + bytes_[size_t(r)];
    }
}

BpeVocab BpeVocab::byte_level() {
    BpeVocab v;
    v.rebuild_bytes();
    return v;
}

const std::string& BpeVocab::token_bytes(int id) const {
    if (id < 0 || id >= size()) throw IndexError("token id " + std::to_string(id) +
                                                 " out of range [0," + std::to_string(size()) + ")");
    return bytes_[size_t(id)];
}

BpeVocab BpeVocab::train(const std::vector<std::string>& corpus, int target_vocab) {
    if (corpus.empty()) throw ValueError("train_bpe: empty corpus");
    if (target_vocab < kBaseVocab)
        throw ValueError("train_bpe: target vocab " + std::to_string(target_vocab) + " below " +
                         std::to_string(kBaseVocab));
    BpeVocab v;
    v.rebuild_bytes();
    std::vector<std::vector<int>> seqs;
    seqs.reserve(corpus.size());
    for (const auto& s : corpus) seqs.push_back(to_byte_ids(s));

    while (v.size() < target_vocab) {
        std::map<std::pair<int, int>, int64_t> counts;
        for (const auto& seq : seqs)
            for (size_t i = 0; i + 1 < seq.size(); ++i) ++counts[{seq[i], seq[i + 1]}];
        int64_t best_count = 0;
        std::pair<int, int> best{-1, -1};
        for (const auto& [pair, count] : counts) {
            if (count < 2) continue;
            if (count > best_count) {
                best_count = count;
                best = pair;
            } else if (count == best_count) {
                const auto cand = std::make_pair(v.bytes_[size_t(pair.first)],
                                                 v.bytes_[size_t(pair.second)]);
                const auto cur = std::make_pair(v.bytes_[size_t(best.first)],
                                                v.bytes_[size_t(best.second)]);
                if (cand < cur) best = pair;
            }
        }
        if (best_count < 2) break;  // nothing left worth merging
        const int id = v.size();
        v.merges_.push_back(best);
        v.bytes_.push_back(v.bytes_[size_t(best.first)] + v.bytes_[size_t(best.second)]);
        for (auto& seq : seqs) apply_merge(seq, best.first, best.second, id);
    }
    return v;
}

std::vector<int> BpeVocab::encode(const std::string& text) const {
    auto seq = to_byte_ids(text);
    for (size_t m = 0; m < merges_.size(); ++m)
        apply_merge(seq, merges_[m].first, merges_[m].second, kBaseVocab + int(m));
    std::vector<int> out;
    out.reserve(seq.size() + 2);
    out.push_back(kBos);
    out.insert(out.end(), seq.begin(), seq.end());
    out.push_back(kEos);
    return out;
}

std::string BpeVocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= size())
            throw IndexError("decode: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(size()) + ")");
        if (id < kByteBase) continue;  // specials contribute nothing
        out += bytes_[size_t(id)];
    }
    return out;
}

void BpeVocab::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "BPE v1 " << size() << "\n";
    for (const auto& [l, r] : merges_)
        os << bytes_to_printable(bytes_[size_t(l)]) << " " << bytes_to_printable(bytes_[size_t(r)])
           << "\n";
    if (!os) throw IoError("write failed: " + path);
}

BpeVocab BpeVocab::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string header;
    if (!std::getline(is, header)) throw IoError("empty vocab file: " + path);
    std::istringstream hs(header);
    std::string tag, ver;
    int declared = 0;
    if (!(hs >> tag >> ver >> declared) || tag != "BPE" || ver != "v1")
        throw IoError("bad vocab header in " + path);

    BpeVocab v;
    v.rebuild_bytes();
    std::unordered_map<std::string, int> by_bytes;
    for (int id = kByteBase; id < kBaseVocab; ++id) by_bytes[v.bytes_[size_t(id)]] = id;

    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const size_t sp = line.find(' ');
        if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size())
            throw IoError("malformed merge line in " + path);
        const std::string left = printable_to_bytes(line.substr(0, sp));
        const std::string right = printable_to_bytes(line.substr(sp + 1));
        const auto li = by_bytes.find(left);
        const auto ri = by_bytes.find(right);
        if (li == by_bytes.end() || ri == by_bytes.end())
            throw IoError("merge references unknown token in " + path);
        const int id = v.size();
        v.merges_.emplace_back(li->second, ri->second);
        v.bytes_.push_back(left + right);
        by_bytes[left + right] = id;
    }
    if (v.size() != declared)
        throw IoError("vocab size mismatch in " + path + ": header says " +
                      std::to_string(declared) + ", file has " + std::to_string(v.size()));
    return v;
}

}  // namespace caplab
