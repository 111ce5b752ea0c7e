#pragma once

#include <string>
#include <utility>
#include <vector>

namespace caplab {

// Byte-level BPE. Ids 0..3 are the specials, 4..259 the raw bytes, 260+ the
// learned merges in creation order. Applying merges in learned order
// reproduces the training segmentation exactly: a merge can only create
// pairs involving its own (younger) token, never an older pair.
class BpeVocab {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kMask = 3;
    static constexpr int kByteBase = 4;
    static constexpr int kBaseVocab = 260;

    // Most-frequent-pair training; ties broken by lexicographic byte-string
    // order of (left, right). Stops early when no pair occurs twice.
    [[nodiscard]] static BpeVocab train(const std::vector<std::string>& corpus, int target_vocab);

    // Bytes + specials only.
    [[nodiscard]] static BpeVocab byte_level();

    int size() const { return kBaseVocab + int(merges_.size()); }

    // BOS + merged byte tokens + EOS.
    std::vector<int> encode(const std::string& text) const;

    // Inverse of encode; special ids contribute nothing.
    std::string decode(const std::vector<int>& ids) const;

    void save(const std::string& path) const;
    [[nodiscard]] static BpeVocab load(const std::string& path);

    const std::vector<std::pair<int, int>>& merges() const { return merges_; }
    const std::string& token_bytes(int id) const;

  private:
    std::vector<std::pair<int, int>> merges_;
    std::vector<std::string> bytes_;  // per id; empty for specials
    void rebuild_bytes();
};

}  // namespace caplab
