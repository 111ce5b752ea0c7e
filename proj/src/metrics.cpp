#include "caplab/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "caplab/error.hpp"

namespace caplab {

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ShapeError("average_precision: score/label length mismatch");
    int n_pos = 0;
    for (int l : labels) n_pos += (l != 0);
    if (n_pos == 0) return -1.0;

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t(0));
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    int hits = 0;
    for (size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] != 0) {
            ++hits;
            ap += double(hits) / double(rank + 1);
        }
    }
    return ap / n_pos;
}

MapResult compute_map(const std::vector<std::vector<double>>& scores,
                      const std::vector<std::vector<int>>& labels) {
    if (scores.empty() || scores.size() != labels.size())
        throw ShapeError("compute_map: score/label row counts disagree");
    const size_t n = scores.size(), c = scores[0].size();
    for (size_t i = 0; i < n; ++i)
        if (scores[i].size() != c || labels[i].size() != c)
            throw ShapeError("compute_map: ragged rows");

    MapResult res;
    double sum = 0.0;
    std::vector<double> col_scores(n);
    std::vector<int> col_labels(n);
    for (size_t j = 0; j < c; ++j) {
        for (size_t i = 0; i < n; ++i) {
            col_scores[i] = scores[i][j];
            col_labels[i] = labels[i][j];
        }
        double ap = average_precision(col_scores, col_labels);
        if (ap < 0.0) {
            ++res.n_classes_skipped;
        } else {
            sum += ap;
            ++res.n_classes_scored;
        }
    }
    if (res.n_classes_scored == 0)
        throw ValueError("compute_map: no class has a positive example");
    res.value = sum / res.n_classes_scored;
    return res;
}

namespace {

std::vector<std::vector<double>> normalize_rows(const std::vector<std::vector<double>>& m,
                                                const char* who) {
    std::vector<std::vector<double>> out = m;
    for (auto& row : out) {
        double ss = 0.0;
        for (double v : row) ss += v * v;
        if (ss == 0.0) throw ValueError(std::string(who) + ": zero-norm embedding row");
        double inv = 1.0 / std::sqrt(ss);
        for (double& v : row) v *= inv;
    }
    return out;
}

// rank (1-based) of the true item for one query; ties lose to lower indices
int true_rank(const std::vector<double>& sims, size_t truth) {
    int ahead = 0;
    for (size_t j = 0; j < sims.size(); ++j) {
        if (j == truth) continue;
        if (sims[j] > sims[truth] || (sims[j] == sims[truth] && j < truth)) ++ahead;
    }
    return ahead + 1;
}

}  // namespace

RetrievalResult retrieval_eval(const std::vector<std::vector<double>>& audio_emb,
                               const std::vector<std::vector<double>>& text_emb,
                               const std::vector<int>& ks) {
    const size_t n = audio_emb.size();
    if (n == 0 || text_emb.size() != n)
        throw ValueError("retrieval_eval: need matching non-empty embedding sets");
    auto a = normalize_rows(audio_emb, "retrieval_eval");
    auto t = normalize_rows(text_emb, "retrieval_eval");
    const size_t d = a[0].size();
    for (const auto& row : a)
        if (row.size() != d) throw ShapeError("retrieval_eval: ragged audio embeddings");
    for (const auto& row : t)
        if (row.size() != d) throw ShapeError("retrieval_eval: ragged text embeddings");

    // sim[i][j] = text query i vs audio item j
    std::vector<std::vector<double>> sim(n, std::vector<double>(n));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (size_t k = 0; k < d; ++k) s += t[i][k] * a[j][k];
            sim[i][j] = s;
        }

    RetrievalResult res;
    std::vector<int> t2a_rank(n), a2t_rank(n);
    std::vector<double> col(n);
    for (size_t i = 0; i < n; ++i) {
        t2a_rank[i] = true_rank(sim[i], i);
        for (size_t q = 0; q < n; ++q) col[q] = sim[q][i];
        a2t_rank[i] = true_rank(col, i);
    }
    for (int k : ks) {
        if (k < 1) throw ValueError("retrieval_eval: k must be positive");
        int ht = 0, ha = 0;
        for (size_t i = 0; i < n; ++i) {
            ht += (t2a_rank[i] <= k);
            ha += (a2t_rank[i] <= k);
        }
        res.text_to_audio[k] = double(ht) / double(n);
        res.audio_to_text[k] = double(ha) / double(n);
    }
    return res;
}

namespace {

std::vector<std::string> rouge_words(const std::string& s) {
    std::string low;
    low.reserve(s.size());
    for (unsigned char c : s) low.push_back(char(std::tolower(c)));
    std::istringstream in(low);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

size_t lcs_len(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

double rouge_l(const std::string& candidate, const std::string& reference) {
    auto cand = rouge_words(candidate);
    auto ref = rouge_words(reference);
    if (cand.empty() && ref.empty()) return 1.0;
    if (cand.empty() || ref.empty()) return 0.0;
    const double lcs = double(lcs_len(cand, ref));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / double(cand.size());
    const double r = lcs / double(ref.size());
    const double b2 = 1.2 * 1.2;
    return (1.0 + b2) * p * r / (r + b2 * p);
}

}  // namespace caplab
