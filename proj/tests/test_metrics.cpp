#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "caplab/error.hpp"
#include "caplab/metrics.hpp"
#include "caplab/rng.hpp"

using namespace caplab;

namespace {

// Rank-counting AP oracle, structurally different from the stable-sort
// implementation: rank(i) = strictly-better + equal-with-lower-index + 1.
double oracle_ap(const std::vector<double>& s, const std::vector<int>& l) {
    int n_pos = 0;
    for (int x : l) n_pos += (x != 0);
    if (n_pos == 0) return -1.0;
    auto rank_of = [&](size_t i) {
        int r = 1;
        for (size_t j = 0; j < s.size(); ++j) {
            if (j == i) continue;
            if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++r;
        }
        return r;
    };
    double ap = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
        if (l[i] == 0) continue;
        int ri = rank_of(i);
        int hits = 0;
        for (size_t j = 0; j < s.size(); ++j)
            if (l[j] != 0 && rank_of(j) <= ri) ++hits;
        ap += double(hits) / ri;
    }
    return ap / n_pos;
}

double oracle_recall(const std::vector<std::vector<double>>& q,
                     const std::vector<std::vector<double>>& items, int k) {
    auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
        double d = 0, na = 0, nb = 0;
        for (size_t i = 0; i < a.size(); ++i) {
            d += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        return d / std::sqrt(na * nb);
    };
    int hits = 0;
    for (size_t i = 0; i < q.size(); ++i) {
        std::vector<std::pair<double, size_t>> ranked;
        for (size_t j = 0; j < items.size(); ++j) ranked.emplace_back(-cos(q[i], items[j]), j);
        std::sort(ranked.begin(), ranked.end());
        for (int r = 0; r < k && r < int(ranked.size()); ++r)
            if (ranked[size_t(r)].second == i) ++hits;
    }
    return double(hits) / double(q.size());
}

// recursive-with-memo LCS, different orientation from the rolling-array DP
size_t oracle_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::vector<int>> memo(a.size() + 1, std::vector<int>(b.size() + 1, -1));
    auto rec = [&](auto&& self, size_t i, size_t j) -> int {
        if (i == a.size() || j == b.size()) return 0;
        int& m = memo[i][j];
        if (m >= 0) return m;
        if (a[i] == b[j]) return m = 1 + self(self, i + 1, j + 1);
        return m = std::max(self(self, i + 1, j), self(self, i, j + 1));
    };
    return size_t(rec(rec, 0, 0));
}

double oracle_rouge(const std::string& cand, const std::string& ref) {
    auto words = [](const std::string& s) {
        std::vector<std::string> out;
        std::string w;
        for (char c : s + " ") {
            if (c == ' ' || c == '\t' || c == '\n') {
                if (!w.empty()) out.push_back(w);
                w.clear();
            } else {
                w.push_back(char(std::tolower((unsigned char)c)));
            }
        }
        return out;
    };
    auto c = words(cand), r = words(ref);
    if (c.empty() && r.empty()) return 1.0;
    if (c.empty() || r.empty()) return 0.0;
    double lcs = double(oracle_lcs(c, r));
    if (lcs == 0.0) return 0.0;
    double p = lcs / c.size(), rr = lcs / r.size(), b2 = 1.44;
    return (1 + b2) * p * rr / (rr + b2 * p);
}

}  // namespace

TEST_CASE("AP hand oracle: ranking [+,-,+] scores 5/6") {
    CHECK(average_precision({3.0, 2.0, 1.0}, {1, 0, 1}) == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("AP: perfect and reversed rankings") {
    CHECK(average_precision({5, 4, 3, 2, 1}, {1, 1, 0, 0, 0}) == doctest::Approx(1.0));
    // P positives shoved to the bottom of N
    const int n = 7, p = 3;
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
        scores.push_back(double(n - i));
        labels.push_back(i >= n - p ? 1 : 0);
    }
    double expect = 0.0;
    for (int i = 1; i <= p; ++i) expect += double(i) / (n - p + i);
    expect /= p;
    CHECK(average_precision(scores, labels) == doctest::Approx(expect));
}

TEST_CASE("AP ties fall back to index order") {
    // all scores equal: order is 0,1,2,3
    CHECK(average_precision({1, 1, 1, 1}, {1, 0, 0, 1}) ==
          doctest::Approx((1.0 / 1.0 + 2.0 / 4.0) / 2.0));
}

TEST_CASE("AP matches the rank-counting oracle on random instances") {
    Rng rng(71);
    for (int trial = 0; trial < 300; ++trial) {
        int n = 1 + int(rng.next_below(8));
        std::vector<double> s;
        std::vector<int> l;
        bool any = false;
        for (int i = 0; i < n; ++i) {
            // coarse scores so ties actually happen
            s.push_back(double(rng.next_below(4)));
            int lab = int(rng.next_below(2));
            l.push_back(lab);
            any = any || lab;
        }
        if (!any) l[0] = 1;
        CHECK(average_precision(s, l) == doctest::Approx(oracle_ap(s, l)).epsilon(1e-12));
    }
}

TEST_CASE("AP is invariant under strictly monotone score transforms") {
    Rng rng(72);
    std::vector<double> s;
    std::vector<int> l;
    for (int i = 0; i < 12; ++i) {
        s.push_back(rng.normal());
        l.push_back(int(rng.next_below(2)));
    }
    l[3] = 1;
    double base = average_precision(s, l);
    auto affine = s, expo = s;
    for (auto& v : affine) v = 2.0 * v + 1.0;
    for (auto& v : expo) v = std::exp(v);
    CHECK(average_precision(affine, l) == base);
    CHECK(average_precision(expo, l) == base);
}

TEST_CASE("mAP skips empty classes and errors when all are empty") {
    std::vector<std::vector<double>> scores = {{0.9, 0.2, 0.5}, {0.1, 0.8, 0.4}};
    std::vector<std::vector<int>> labels = {{1, 0, 0}, {0, 1, 0}};  // class 2 has no positive
    auto r = compute_map(scores, labels);
    CHECK(r.n_classes_scored == 2);
    CHECK(r.n_classes_skipped == 1);
    CHECK(r.value == doctest::Approx(1.0));

    std::vector<std::vector<int>> empty = {{0, 0, 0}, {0, 0, 0}};
    CHECK_THROWS_AS((void)compute_map(scores, empty), ValueError);
    CHECK_THROWS_AS((void)compute_map({}, {}), ShapeError);
}

TEST_CASE("recall@k: orthonormal pairs, identical embeddings, recall@N") {
    std::vector<std::vector<double>> eye = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    auto r = retrieval_eval(eye, eye, {1, 2, 3});
    CHECK(r.text_to_audio[1] == 1.0);
    CHECK(r.audio_to_text[1] == 1.0);
    CHECK(r.text_to_audio[3] == 1.0);

    // every embedding identical: tie rule hands out ranks by index
    const int n = 5;
    std::vector<std::vector<double>> same(n, {0.3, 0.4});
    auto rs = retrieval_eval(same, same, {1, 2, 3, 4, 5});
    for (int k = 1; k <= n; ++k) {
        CHECK(rs.text_to_audio[k] == doctest::Approx(double(std::min(k, n)) / n));
        CHECK(rs.audio_to_text[k] == doctest::Approx(double(std::min(k, n)) / n));
    }
}

TEST_CASE("recall@k is monotone and matches the sort-based oracle") {
    Rng rng(73);
    const int n = 20, d = 6;
    std::vector<std::vector<double>> a(n, std::vector<double>(d)), t = a;
    for (auto& row : a)
        for (auto& v : row) v = rng.normal();
    for (auto& row : t)
        for (auto& v : row) v = rng.normal();
    auto r = retrieval_eval(a, t, {1, 3, 5, 10, 20});
    double prev = 0.0;
    for (int k : {1, 3, 5, 10, 20}) {
        CHECK(r.text_to_audio[k] >= prev);
        prev = r.text_to_audio[k];
        CHECK(r.text_to_audio[k] == doctest::Approx(oracle_recall(t, a, k)).epsilon(1e-12));
        CHECK(r.audio_to_text[k] == doctest::Approx(oracle_recall(a, t, k)).epsilon(1e-12));
    }
    CHECK(r.text_to_audio[20] == 1.0);
}

TEST_CASE("recall@k is invariant under a joint permutation of the pairs") {
    Rng rng(74);
    const int n = 9, d = 4;
    std::vector<std::vector<double>> a(n, std::vector<double>(d)), t = a;
    for (auto& row : a)
        for (auto& v : row) v = rng.normal();
    for (auto& row : t)
        for (auto& v : row) v = rng.normal();
    auto base = retrieval_eval(a, t, {1, 3});

    std::vector<int> perm = {4, 7, 1, 0, 8, 2, 6, 3, 5};
    std::vector<std::vector<double>> pa(n), pt(n);
    for (int i = 0; i < n; ++i) {
        pa[size_t(i)] = a[size_t(perm[size_t(i)])];
        pt[size_t(i)] = t[size_t(perm[size_t(i)])];
    }
    auto permuted = retrieval_eval(pa, pt, {1, 3});
    CHECK(permuted.text_to_audio[1] == doctest::Approx(base.text_to_audio[1]));
    CHECK(permuted.audio_to_text[3] == doctest::Approx(base.audio_to_text[3]));
}

TEST_CASE("retrieval_eval rejects bad inputs") {
    CHECK_THROWS_AS((void)retrieval_eval({}, {}, {1}), ValueError);
    std::vector<std::vector<double>> ok = {{1, 0}}, zero = {{0, 0}};
    CHECK_THROWS_AS((void)retrieval_eval(ok, zero, {1}), ValueError);
    CHECK_THROWS_AS((void)retrieval_eval(ok, ok, {0}), ValueError);
}

TEST_CASE("rouge_l fixed points and the worked example") {
    CHECK(rouge_l("a quiet tone", "a quiet tone") == doctest::Approx(1.0));
    CHECK(rouge_l("dog barking loudly", "piano chord rings") == 0.0);
    CHECK(rouge_l("", "") == 1.0);
    CHECK(rouge_l("", "something") == 0.0);
    CHECK(rouge_l("something", "") == 0.0);
    CHECK(rouge_l("The Cat", "the cat") == doctest::Approx(1.0));

    double p = 1.0, r = 2.0 / 3.0, b2 = 1.44;
    double expect = (1 + b2) * p * r / (r + b2 * p);
    CHECK(rouge_l("the cat", "the cat sat") == doctest::Approx(expect).epsilon(1e-12));
    CHECK(rouge_l("the cat", "the cat sat") == doctest::Approx(0.772152).epsilon(1e-4));
}

TEST_CASE("beta = 1.2 makes candidate/reference roles asymmetric") {
    double ab = rouge_l("a b c", "a b");
    double ba = rouge_l("a b", "a b c");
    CHECK(ab != ba);
    // recall-heavy weighting: the direction with higher recall wins
    CHECK(ab == doctest::Approx(oracle_rouge("a b c", "a b")).epsilon(1e-12));
    CHECK(ba == doctest::Approx(oracle_rouge("a b", "a b c")).epsilon(1e-12));
}

TEST_CASE("rouge_l matches the memoized-LCS oracle on random word soup") {
    Rng rng(75);
    const std::vector<std::string> lexicon = {"tone", "chirp", "noise", "rises", "falls",
                                              "a",    "the",   "low",   "high",  "band"};
    for (int trial = 0; trial < 200; ++trial) {
        auto sentence = [&] {
            int len = int(rng.next_below(8));
            std::string s;
            for (int i = 0; i < len; ++i) {
                if (i) s += ' ';
                s += lexicon[size_t(rng.next_below(lexicon.size()))];
            }
            return s;
        };
        std::string c = sentence(), r = sentence();
        CHECK(rouge_l(c, r) == doctest::Approx(oracle_rouge(c, r)).epsilon(1e-12));
    }
}
