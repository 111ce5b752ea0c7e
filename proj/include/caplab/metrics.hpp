#pragma once

#include <map>
#include <string>
#include <vector>

// Pure metric functions: macro mAP, retrieval recall@k, RougeL.

namespace caplab {

// Average precision for one class. labels are 0/1, ranking is by descending
// score with ties kept in index order (stable). Returns -1 if no positives.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

struct MapResult {
    double value = 0.0;
    int n_classes_scored = 0;
    int n_classes_skipped = 0;  // classes without a single positive
};

// scores/labels: [N rows][C classes]. Macro mean over classes that have at
// least one positive; throws if none does.
MapResult compute_map(const std::vector<std::vector<double>>& scores,
                      const std::vector<std::vector<int>>& labels);

struct RetrievalResult {
    std::map<int, double> text_to_audio;  // k -> recall
    std::map<int, double> audio_to_text;
};

// Row i of both matrices is a true pair. Cosine similarity; candidates sorted
// by descending score with ties broken by ascending index.
RetrievalResult retrieval_eval(const std::vector<std::vector<double>>& audio_emb,
                               const std::vector<std::vector<double>>& text_emb,
                               const std::vector<int>& ks);

// LCS-based F-score with beta = 1.2. Tokens are lowercased whitespace splits.
// Both empty -> 1.0, exactly one empty -> 0.0.
double rouge_l(const std::string& candidate, const std::string& reference);

}  // namespace caplab
