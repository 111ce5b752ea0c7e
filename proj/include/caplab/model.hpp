#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "caplab/error.hpp"
#include "caplab/ops.hpp"
#include "caplab/rng.hpp"
#include "caplab/tensor.hpp"

// Model zoo: Zipformer-lite audio encoder (six transformer stages on a
// 50→25→12.5→6.25→12.5→25 Hz U shape with skip connections and 25 Hz fusion),
// bidirectional text encoder, and a text decoder with cross-attention.
// Everything is templated on the scalar so gradient checks can run in double.

namespace caplab {

struct EncoderConfig {
    int dim = 192;
    std::vector<int> stage_blocks = {2, 2, 3, 4, 3, 2};
    int heads = 4;
    int ffn_mult = 4;
    int max_frames = 4096;  // learned positions at the 50 Hz level
};

struct DecoderConfig {
    int layers = 3;
    int heads = 4;
    int ffn_mult = 4;
    int max_tokens = 2048;
};

struct ModelConfig {
    EncoderConfig enc;
    DecoderConfig dec;
    int vocab = 2000;
    int proj_dim = 128;  // shared contrastive space

    // text encoder keeps twice the decoder's depth
    int text_layers() const { return 2 * dec.layers; }

    void validate() const {
        if (enc.dim <= 0 || enc.heads <= 0 || enc.dim % enc.heads != 0)
            throw ConfigError("encoder dim must be a positive multiple of heads");
        if (enc.stage_blocks.size() != 6)
            throw ConfigError("stage_blocks must list exactly 6 stages, got " +
                              std::to_string(enc.stage_blocks.size()));
        for (int b : enc.stage_blocks)
            if (b < 1) throw ConfigError("every stage needs at least one block");
        if (dec.layers < 1) throw ConfigError("decoder needs at least one layer");
        if (enc.dim % dec.heads != 0)
            throw ConfigError("encoder dim must divide evenly across decoder heads");
        if (vocab < 260) throw ConfigError("vocab must cover bytes + specials (>= 260)");
        if (proj_dim < 1) throw ConfigError("proj_dim must be positive");
    }
};

template <typename T>
struct FrameEmbeddingsT {
    TensorT<T> frames;  // [T' x dim] at 25 Hz
    int valid = 0;      // leading valid frame count
};

template <typename T>
using ParamsT = std::vector<std::pair<std::string, TensorT<T>>>;

namespace model_detail {

template <typename T>
TensorT<T> init_tensor(std::vector<int> shape, uint64_t seed, const std::string& name,
                       double scale) {
    auto t = TensorT<T>::zeros(std::move(shape), true);
    if (scale != 0.0) {
        Rng rng(Rng::derive(seed, name));
        for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = T(rng.normal() * scale);
    }
    return t;
}

template <typename T>
TensorT<T> init_ones(std::vector<int> shape) {
    auto t = TensorT<T>::filled(std::move(shape), T(1), true);
    return t;
}

// Additive attention mask: -1e30 where key j is out of reach. exp underflows
// to exactly zero after max subtraction, so masked keys carry zero weight.
template <typename T>
TensorT<T> attn_mask(int tq, int tk, bool causal, int valid_k) {
    auto m = TensorT<T>::zeros({tq, tk});
    for (int i = 0; i < tq; ++i)
        for (int j = 0; j < tk; ++j)
            if (j >= valid_k || (causal && j > i)) m.at(i, j) = T(-1e30);
    return m;
}

}  // namespace model_detail

template <typename T>
struct AttnParamsT {
    TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;

    void init(int dim, uint64_t seed, const std::string& prefix) {
        using model_detail::init_tensor;
        wq = init_tensor<T>({dim, dim}, seed, prefix + ".wq", 0.02);
        bq = init_tensor<T>({dim}, seed, prefix + ".bq", 0.0);
        wk = init_tensor<T>({dim, dim}, seed, prefix + ".wk", 0.02);
        bk = init_tensor<T>({dim}, seed, prefix + ".bk", 0.0);
        wv = init_tensor<T>({dim, dim}, seed, prefix + ".wv", 0.02);
        bv = init_tensor<T>({dim}, seed, prefix + ".bv", 0.0);
        wo = init_tensor<T>({dim, dim}, seed, prefix + ".wo", 0.02);
        bo = init_tensor<T>({dim}, seed, prefix + ".bo", 0.0);
    }
    void collect(const std::string& prefix, ParamsT<T>& out) const {
        out.emplace_back(prefix + ".wq", wq);
        out.emplace_back(prefix + ".bq", bq);
        out.emplace_back(prefix + ".wk", wk);
        out.emplace_back(prefix + ".bk", bk);
        out.emplace_back(prefix + ".wv", wv);
        out.emplace_back(prefix + ".bv", bv);
        out.emplace_back(prefix + ".wo", wo);
        out.emplace_back(prefix + ".bo", bo);
    }
    static int64_t count(int dim) { return 4 * (int64_t(dim) * dim + dim); }
};

// Multi-head attention. x supplies queries, mem supplies keys/values; only the
// first valid_k memory rows are reachable.
template <typename T>
TensorT<T> attention(const AttnParamsT<T>& p, const TensorT<T>& x, const TensorT<T>& mem,
                     int heads, bool causal, int valid_k) {
    const int dim = x.dim(1);
    const int dh = dim / heads;
    const int tq = x.dim(0), tk = mem.dim(0);
    if (valid_k < 1 || valid_k > tk)
        throw ValueError("attention: valid key count " + std::to_string(valid_k) + " of " +
                         std::to_string(tk));
    auto q = ops::add_rowvec(ops::matmul(x, p.wq), p.bq);
    auto k = ops::add_rowvec(ops::matmul(mem, p.wk), p.bk);
    auto v = ops::add_rowvec(ops::matmul(mem, p.wv), p.bv);
    auto mask = model_detail::attn_mask<T>(tq, tk, causal, valid_k);
    std::vector<TensorT<T>> outs;
    outs.reserve(size_t(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = ops::slice_cols(q, h * dh, dh);
        auto kh = ops::slice_cols(k, h * dh, dh);
        auto vh = ops::slice_cols(v, h * dh, dh);
        auto scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), 1.0 / std::sqrt(double(dh)));
        auto probs = ops::softmax(ops::add(scores, mask), 1);
        outs.push_back(ops::matmul(probs, vh));
    }
    return ops::add_rowvec(ops::matmul(ops::concat_cols(outs), p.wo), p.bo);
}

// Pre-LN transformer block: x + attn(ln1(x)), then + ffn(ln2(·)).
template <typename T>
struct BlockT {
    TensorT<T> ln1g, ln1b, ln2g, ln2b, w1, b1, w2, b2;
    AttnParamsT<T> attn;

    void init(int dim, int ffn_mult, uint64_t seed, const std::string& prefix) {
        using model_detail::init_tensor;
        ln1g = model_detail::init_ones<T>({dim});
        ln1b = init_tensor<T>({dim}, seed, prefix + ".ln1.b", 0.0);
        attn.init(dim, seed, prefix + ".attn");
        ln2g = model_detail::init_ones<T>({dim});
        ln2b = init_tensor<T>({dim}, seed, prefix + ".ln2.b", 0.0);
        const int f = dim * ffn_mult;
        w1 = init_tensor<T>({dim, f}, seed, prefix + ".ffn.w1", 0.02);
        b1 = init_tensor<T>({f}, seed, prefix + ".ffn.b1", 0.0);
        w2 = init_tensor<T>({f, dim}, seed, prefix + ".ffn.w2", 0.02);
        b2 = init_tensor<T>({dim}, seed, prefix + ".ffn.b2", 0.0);
    }
    void collect(const std::string& prefix, ParamsT<T>& out) const {
        out.emplace_back(prefix + ".ln1.g", ln1g);
        out.emplace_back(prefix + ".ln1.b", ln1b);
        attn.collect(prefix + ".attn", out);
        out.emplace_back(prefix + ".ln2.g", ln2g);
        out.emplace_back(prefix + ".ln2.b", ln2b);
        out.emplace_back(prefix + ".ffn.w1", w1);
        out.emplace_back(prefix + ".ffn.b1", b1);
        out.emplace_back(prefix + ".ffn.w2", w2);
        out.emplace_back(prefix + ".ffn.b2", b2);
    }
    TensorT<T> forward(const TensorT<T>& x, int heads, bool causal, int valid) const {
        auto h = ops::layer_norm(x, ln1g, ln1b);
        auto y = ops::add(x, attention(attn, h, h, heads, causal, valid));
        auto f = ops::layer_norm(y, ln2g, ln2b);
        auto ff = ops::add_rowvec(
            ops::matmul(ops::gelu(ops::add_rowvec(ops::matmul(f, w1), b1)), w2), b2);
        return ops::add(y, ff);
    }
    static int64_t count(int dim, int ffn_mult) {
        const int64_t d = dim, f = int64_t(dim) * ffn_mult;
        return 4 * d + AttnParamsT<T>::count(dim) + d * f + f + f * d + d;
    }
};

// Decoder block: self-attention, cross-attention over audio memory, FFN.
template <typename T>
struct DecBlockT {
    TensorT<T> ln1g, ln1b, lnxg, lnxb, ln2g, ln2b, w1, b1, w2, b2;
    AttnParamsT<T> self_attn, cross;

    void init(int dim, int ffn_mult, uint64_t seed, const std::string& prefix) {
        using model_detail::init_tensor;
        ln1g = model_detail::init_ones<T>({dim});
        ln1b = init_tensor<T>({dim}, seed, prefix + ".ln1.b", 0.0);
        self_attn.init(dim, seed, prefix + ".attn");
        lnxg = model_detail::init_ones<T>({dim});
        lnxb = init_tensor<T>({dim}, seed, prefix + ".lnx.b", 0.0);
        cross.init(dim, seed, prefix + ".cross");
        ln2g = model_detail::init_ones<T>({dim});
        ln2b = init_tensor<T>({dim}, seed, prefix + ".ln2.b", 0.0);
        const int f = dim * ffn_mult;
        w1 = init_tensor<T>({dim, f}, seed, prefix + ".ffn.w1", 0.02);
        b1 = init_tensor<T>({f}, seed, prefix + ".ffn.b1", 0.0);
        w2 = init_tensor<T>({f, dim}, seed, prefix + ".ffn.w2", 0.02);
        b2 = init_tensor<T>({dim}, seed, prefix + ".ffn.b2", 0.0);
    }
    void collect(const std::string& prefix, ParamsT<T>& out) const {
        out.emplace_back(prefix + ".ln1.g", ln1g);
        out.emplace_back(prefix + ".ln1.b", ln1b);
        self_attn.collect(prefix + ".attn", out);
        out.emplace_back(prefix + ".lnx.g", lnxg);
        out.emplace_back(prefix + ".lnx.b", lnxb);
        cross.collect(prefix + ".cross", out);
        out.emplace_back(prefix + ".ln2.g", ln2g);
        out.emplace_back(prefix + ".ln2.b", ln2b);
        out.emplace_back(prefix + ".ffn.w1", w1);
        out.emplace_back(prefix + ".ffn.b1", b1);
        out.emplace_back(prefix + ".ffn.w2", w2);
        out.emplace_back(prefix + ".ffn.b2", b2);
    }
    TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& memory, int mem_valid, int heads,
                       bool causal, int self_valid = -1) const {
        if (self_valid < 0) self_valid = x.dim(0);
        auto h = ops::layer_norm(x, ln1g, ln1b);
        auto y = ops::add(x, attention(self_attn, h, h, heads, causal, self_valid));
        auto hx = ops::layer_norm(y, lnxg, lnxb);
        auto c = ops::add(y, attention(cross, hx, memory, heads, false, mem_valid));
        auto f = ops::layer_norm(c, ln2g, ln2b);
        auto ff = ops::add_rowvec(
            ops::matmul(ops::gelu(ops::add_rowvec(ops::matmul(f, w1), b1)), w2), b2);
        return ops::add(c, ff);
    }
    static int64_t count(int dim, int ffn_mult) {
        return BlockT<T>::count(dim, ffn_mult) + AttnParamsT<T>::count(dim) + 2 * int64_t(dim);
    }
};

// ---------------------------------------------------------------------------
// Audio encoder
// ---------------------------------------------------------------------------

template <typename T>
class AudioEncoderT {
  public:
    static constexpr int kMinMelFrames = 16;

    void init(const EncoderConfig& cfg, uint64_t seed) {
        cfg_ = cfg;
        using model_detail::init_tensor;
        conv_w_ = init_tensor<T>({3, 80, cfg.dim}, seed, "audio.conv.w", 0.02);
        conv_b_ = init_tensor<T>({cfg.dim}, seed, "audio.conv.b", 0.0);
        pos_ = init_tensor<T>({cfg.max_frames, cfg.dim}, seed, "audio.pos", 0.02);
        stages_.clear();
        stages_.resize(6);
        for (int s = 0; s < 6; ++s) {
            stages_[size_t(s)].resize(size_t(cfg.stage_blocks[size_t(s)]));
            for (int b = 0; b < cfg.stage_blocks[size_t(s)]; ++b) {
                const std::string prefix =
                    "audio.s" + std::to_string(s + 1) + ".b" + std::to_string(b);
                stages_[size_t(s)][size_t(b)].init(cfg.dim, cfg.ffn_mult, seed, prefix);
            }
        }
        fuse_g_ = model_detail::init_ones<T>({cfg.dim});
        fuse_b_ = init_tensor<T>({cfg.dim}, seed, "audio.fuse_ln.b", 0.0);
    }

    void collect(ParamsT<T>& out) const {
        out.emplace_back("audio.conv.w", conv_w_);
        out.emplace_back("audio.conv.b", conv_b_);
        out.emplace_back("audio.pos", pos_);
        for (int s = 0; s < 6; ++s)
            for (size_t b = 0; b < stages_[size_t(s)].size(); ++b)
                stages_[size_t(s)][b].collect(
                    "audio.s" + std::to_string(s + 1) + ".b" + std::to_string(b), out);
        out.emplace_back("audio.fuse_ln.g", fuse_g_);
        out.emplace_back("audio.fuse_ln.b", fuse_b_);
    }

    static int64_t count(const EncoderConfig& cfg) {
        int64_t n = 3 * 80 * int64_t(cfg.dim) + cfg.dim;         // conv
        n += int64_t(cfg.max_frames) * cfg.dim;                  // positions
        for (int b : cfg.stage_blocks) n += b * BlockT<T>::count(cfg.dim, cfg.ffn_mult);
        n += 2 * int64_t(cfg.dim);                               // fusion norm
        return n;
    }

    // mel: [T x 80]; rows at index >= valid_mel are padding.
    FrameEmbeddingsT<T> encode(const TensorT<T>& mel, int valid_mel = -1) const {
        if (mel.rank() != 2 || mel.dim(1) != 80)
            throw ShapeError("encode_audio: expected [T x 80] mel, got " + shape_str(mel.shape()));
        if (valid_mel < 0) valid_mel = mel.dim(0);
        if (valid_mel < kMinMelFrames)
            throw ValueError("encode_audio: " + std::to_string(valid_mel) +
                             " mel frames cannot survive subsampling (need >= " +
                             std::to_string(kMinMelFrames) + ")");
        if (valid_mel > mel.dim(0)) throw ValueError("encode_audio: valid count exceeds rows");

        // zero padding rows so the strided conv sees the same values a
        // standalone run would
        auto x = ops::mask_tail_rows(mel, valid_mel);
        auto c = ops::conv1d_k3s2(x, conv_w_, conv_b_);  // 100 -> 50 Hz
        const int t50 = c.dim(0);
        const int v50 = (valid_mel + 1) / 2;
        if (t50 > cfg_.max_frames)
            throw ValueError("encode_audio: " + std::to_string(t50) +
                             " frames exceed the position table (" +
                             std::to_string(cfg_.max_frames) + ")");
        auto h = ops::add(c, ops::slice_rows(pos_, 0, t50));

        // stage 1 @50 Hz
        auto s1 = run_stage(0, h, v50);
        // stage 2 @25 Hz
        auto d2 = ops::downsample2(s1, v50);
        const int v25 = (v50 + 1) / 2;
        auto s2 = run_stage(1, d2, v25);
        // stage 3 @12.5 Hz
        auto d3 = ops::downsample2(s2, v25);
        const int v12 = (v25 + 1) / 2;
        auto s3 = run_stage(2, d3, v12);
        // stage 4 @6.25 Hz
        auto d4 = ops::downsample2(s3, v12);
        const int v6 = (v12 + 1) / 2;
        auto s4 = run_stage(3, d4, v6);
        // stage 5 @12.5 Hz with the stage-3 skip
        auto u5 = ops::upsample2(s4, s3.dim(0));
        auto s5 = run_stage(4, ops::add(s3, u5), v12);
        // stage 6 @25 Hz with the stage-2 skip
        auto u6 = ops::upsample2(s5, s2.dim(0));
        auto s6 = run_stage(5, ops::add(s2, u6), v25);

        // fuse everything at 25 Hz
        auto f1 = ops::downsample2(s1, v50);
        auto f3 = ops::upsample2(s3, s2.dim(0));
        auto f4 = ops::upsample2(ops::upsample2(s4, s3.dim(0)), s2.dim(0));
        auto f5 = ops::upsample2(s5, s2.dim(0));
        auto sum = ops::add(ops::add(ops::add(f1, s2), ops::add(f3, f4)), ops::add(f5, s6));
        FrameEmbeddingsT<T> out;
        out.frames = ops::layer_norm(sum, fuse_g_, fuse_b_);
        out.valid = v25;
        return out;
    }

    const EncoderConfig& config() const { return cfg_; }

  private:
    TensorT<T> run_stage(int s, const TensorT<T>& x, int valid) const {
        auto h = x;
        for (const auto& b : stages_[size_t(s)]) h = b.forward(h, cfg_.heads, false, valid);
        return h;
    }

    EncoderConfig cfg_;
    TensorT<T> conv_w_, conv_b_, pos_, fuse_g_, fuse_b_;
    std::vector<std::vector<BlockT<T>>> stages_;
};

// ---------------------------------------------------------------------------
// Text encoder (bidirectional; clip embedding read at the BOS position)
// ---------------------------------------------------------------------------

template <typename T>
class TextEncoderT {
  public:
    void init(int vocab, int dim, int layers, int heads, int ffn_mult, int max_tokens,
              uint64_t seed) {
        using model_detail::init_tensor;
        vocab_ = vocab;
        dim_ = dim;
        heads_ = heads;
        max_tokens_ = max_tokens;
        emb_ = init_tensor<T>({vocab, dim}, seed, "text.emb", 0.02);
        pos_ = init_tensor<T>({max_tokens, dim}, seed, "text.pos", 0.02);
        blocks_.clear();
        blocks_.resize(size_t(layers));
        for (int l = 0; l < layers; ++l)
            blocks_[size_t(l)].init(dim, ffn_mult, seed, "text.l" + std::to_string(l));
        lng_ = model_detail::init_ones<T>({dim});
        lnb_ = init_tensor<T>({dim}, seed, "text.ln.b", 0.0);
    }

    void collect(ParamsT<T>& out) const {
        out.emplace_back("text.emb", emb_);
        out.emplace_back("text.pos", pos_);
        for (size_t l = 0; l < blocks_.size(); ++l)
            blocks_[l].collect("text.l" + std::to_string(l), out);
        out.emplace_back("text.ln.g", lng_);
        out.emplace_back("text.ln.b", lnb_);
    }

    static int64_t count(int vocab, int dim, int layers, int ffn_mult, int max_tokens) {
        return int64_t(vocab) * dim + int64_t(max_tokens) * dim +
               layers * BlockT<T>::count(dim, ffn_mult) + 2 * int64_t(dim);
    }

    // Returns the [1 x dim] representation at the BOS position. PAD tokens in
    // the tail are masked out of attention.
    TensorT<T> encode(const std::vector<int>& tokens) const {
        if (tokens.empty()) throw ValueError("encode_text: empty token sequence");
        if (int(tokens.size()) > max_tokens_)
            throw ValueError("encode_text: " + std::to_string(tokens.size()) +
                             " tokens exceed max positions " + std::to_string(max_tokens_));
        int valid = int(tokens.size());
        for (size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i] == 0) {  // PAD
                valid = int(i);
                break;
            }
        if (valid < 1) throw ValueError("encode_text: sequence starts with PAD");
        auto h = ops::add(ops::embedding(emb_, tokens), ops::slice_rows(pos_, 0, int(tokens.size())));
        for (const auto& b : blocks_) h = b.forward(h, heads_, false, valid);
        auto n = ops::layer_norm(h, lng_, lnb_);
        return ops::slice_rows(n, 0, 1);
    }

  private:
    int vocab_ = 0, dim_ = 0, heads_ = 0, max_tokens_ = 0;
    TensorT<T> emb_, pos_, lng_, lnb_;
    std::vector<BlockT<T>> blocks_;
};

// ---------------------------------------------------------------------------
// Text decoder with cross-attention
// ---------------------------------------------------------------------------

template <typename T>
class TextDecoderT {
  public:
    void init(int vocab, int dim, const DecoderConfig& cfg, uint64_t seed) {
        using model_detail::init_tensor;
        vocab_ = vocab;
        dim_ = dim;
        cfg_ = cfg;
        emb_ = init_tensor<T>({vocab, dim}, seed, "dec.emb", 0.02);
        pos_ = init_tensor<T>({cfg.max_tokens, dim}, seed, "dec.pos", 0.02);
        blocks_.clear();
        blocks_.resize(size_t(cfg.layers));
        for (int l = 0; l < cfg.layers; ++l)
            blocks_[size_t(l)].init(dim, cfg.ffn_mult, seed, "dec.l" + std::to_string(l));
        lng_ = model_detail::init_ones<T>({dim});
        lnb_ = init_tensor<T>({dim}, seed, "dec.ln.b", 0.0);
        out_w_ = init_tensor<T>({dim, vocab}, seed, "dec.out.w", 0.02);
        out_b_ = init_tensor<T>({vocab}, seed, "dec.out.b", 0.0);
    }

    void collect(ParamsT<T>& out) const {
        out.emplace_back("dec.emb", emb_);
        out.emplace_back("dec.pos", pos_);
        for (size_t l = 0; l < blocks_.size(); ++l)
            blocks_[l].collect("dec.l" + std::to_string(l), out);
        out.emplace_back("dec.ln.g", lng_);
        out.emplace_back("dec.ln.b", lnb_);
        out.emplace_back("dec.out.w", out_w_);
        out.emplace_back("dec.out.b", out_b_);
    }

    static int64_t count(int vocab, int dim, const DecoderConfig& cfg) {
        return int64_t(vocab) * dim + int64_t(cfg.max_tokens) * dim +
               cfg.layers * DecBlockT<T>::count(dim, cfg.ffn_mult) + 2 * int64_t(dim) +
               int64_t(dim) * vocab + vocab;
    }

    // logits [len(inputs) x vocab]. valid limits self-attention keys so a
    // PAD-padded batch row scores like its standalone version; -1 means all.
    TensorT<T> decode(const FrameEmbeddingsT<T>& memory, const std::vector<int>& inputs,
                      bool causal, int valid = -1) const {
        if (memory.frames.numel() == 0 || memory.valid < 1)
            throw ValueError("decode_text: empty audio memory");
        if (inputs.empty()) throw ValueError("decode_text: empty input sequence");
        if (int(inputs.size()) > cfg_.max_tokens)
            throw ValueError("decode_text: " + std::to_string(inputs.size()) +
                             " tokens exceed max positions " + std::to_string(cfg_.max_tokens));
        if (valid < 0) valid = int(inputs.size());
        if (valid < 1 || valid > int(inputs.size()))
            throw ValueError("decode_text: bad valid count " + std::to_string(valid));
        auto h = ops::add(ops::embedding(emb_, inputs),
                          ops::slice_rows(pos_, 0, int(inputs.size())));
        for (const auto& b : blocks_)
            h = b.forward(h, memory.frames, memory.valid, cfg_.heads, causal, valid);
        auto n = ops::layer_norm(h, lng_, lnb_);
        return ops::add_rowvec(ops::matmul(n, out_w_), out_b_);
    }

  private:
    int vocab_ = 0, dim_ = 0;
    DecoderConfig cfg_;
    TensorT<T> emb_, pos_, lng_, lnb_, out_w_, out_b_;
    std::vector<DecBlockT<T>> blocks_;
};

// ---------------------------------------------------------------------------
// Contrastive head: pooling + projections + learned temperature
// ---------------------------------------------------------------------------

template <typename T>
class ContrastiveHeadT {
  public:
    void init(int dim, int proj_dim, uint64_t seed) {
        using model_detail::init_tensor;
        aw_ = init_tensor<T>({dim, proj_dim}, seed, "contrast.aproj.w", 0.02);
        ab_ = init_tensor<T>({proj_dim}, seed, "contrast.aproj.b", 0.0);
        tw_ = init_tensor<T>({dim, proj_dim}, seed, "contrast.tproj.w", 0.02);
        tb_ = init_tensor<T>({proj_dim}, seed, "contrast.tproj.b", 0.0);
        log_tau_ = TensorT<T>::scalar(T(std::log(0.07)), true);
    }

    void collect(ParamsT<T>& out) const {
        out.emplace_back("contrast.aproj.w", aw_);
        out.emplace_back("contrast.aproj.b", ab_);
        out.emplace_back("contrast.tproj.w", tw_);
        out.emplace_back("contrast.tproj.b", tb_);
        out.emplace_back("contrast.log_tau", log_tau_);
    }

    static int64_t count(int dim, int proj_dim) {
        return 2 * (int64_t(dim) * proj_dim + proj_dim) + 1;
    }

    // mean over valid frames, then linear map to the shared space: [1 x proj]
    TensorT<T> project_audio(const FrameEmbeddingsT<T>& f) const {
        return project_pooled(ops::masked_mean_rows(f.frames, f.valid));
    }
    // same linear map on an externally pooled clip vector
    TensorT<T> project_pooled(const TensorT<T>& pooled) const {
        return ops::add_rowvec(ops::matmul(pooled, aw_), ab_);
    }
    // text clip vector [1 x dim] -> [1 x proj]
    TensorT<T> project_text(const TensorT<T>& clip) const {
        return ops::add_rowvec(ops::matmul(clip, tw_), tb_);
    }
    const TensorT<T>& log_tau() const { return log_tau_; }

  private:
    TensorT<T> aw_, ab_, tw_, tb_, log_tau_;
};

// ---------------------------------------------------------------------------
// Full model bundle
// ---------------------------------------------------------------------------

template <typename T>
class CaptionModelT {
  public:
    void init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        cfg_ = cfg;
        audio.init(cfg.enc, seed);
        text.init(cfg.vocab, cfg.enc.dim, cfg.text_layers(), cfg.dec.heads, cfg.dec.ffn_mult,
                  cfg.dec.max_tokens, seed);
        decoder.init(cfg.vocab, cfg.enc.dim, cfg.dec, seed);
        head.init(cfg.enc.dim, cfg.proj_dim, seed);
    }

    ParamsT<T> params() const {
        ParamsT<T> out;
        audio.collect(out);
        text.collect(out);
        decoder.collect(out);
        head.collect(out);
        return out;
    }

    static int64_t param_count(const ModelConfig& cfg) {
        return AudioEncoderT<T>::count(cfg.enc) +
               TextEncoderT<T>::count(cfg.vocab, cfg.enc.dim, cfg.text_layers(), cfg.dec.ffn_mult,
                                      cfg.dec.max_tokens) +
               TextDecoderT<T>::count(cfg.vocab, cfg.enc.dim, cfg.dec) +
               ContrastiveHeadT<T>::count(cfg.enc.dim, cfg.proj_dim);
    }

    const ModelConfig& config() const { return cfg_; }

    AudioEncoderT<T> audio;
    TextEncoderT<T> text;
    TextDecoderT<T> decoder;
    ContrastiveHeadT<T> head;

  private:
    ModelConfig cfg_;
};

using CaptionModel = CaptionModelT<float>;
using FrameEmbeddings = FrameEmbeddingsT<float>;
using Params = ParamsT<float>;

// T' = ceil(T_mel / 4): two stride/average halvings from 100 Hz to 25 Hz.
inline int audio_out_frames(int mel_frames) { return (mel_frames + 3) / 4; }

}  // namespace caplab
