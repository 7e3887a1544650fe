#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ledit/ops.hpp"
#include "ledit/rng.hpp"
#include "ledit/tensor.hpp"

namespace ledit {

constexpr const char* kEndOfText = "<|endoftext|>";

/// Token table: id == line number in the vocabulary file.
struct Vocabulary {
    std::vector<std::string> tokens;

    std::size_t size() const { return tokens.size(); }

    int id_of(const std::string& tok) const {
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i] == tok) return static_cast<int>(i);
        throw EncodingError("token not in vocabulary: " + tok);
    }

    int end_of_text_id() const { return id_of(kEndOfText); }

    static Vocabulary load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open vocabulary: " + path);
        Vocabulary v;
        std::string line;
        while (std::getline(f, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
            if (!line.empty()) v.tokens.push_back(line);
        }
        if (v.tokens.empty()) throw IoError("empty vocabulary: " + path);
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw IoError("cannot write vocabulary: " + path);
        for (const auto& t : tokens) f << t << '\n';
    }

    /// Vocabulary of the procedural shape dataset.
    static Vocabulary toy_default() {
        return Vocabulary{{kEndOfText, "square", "circle", "triangle", "left", "right", "dark",
                           "light"}};
    }
};

/// Fixed-length token id sequence; positions past the content hold the
/// end-of-text id.
struct TokenSequence {
    std::vector<int> ids;
    std::size_t content_length = 0;

    std::size_t length() const { return ids.size(); }

    static TokenSequence pad(std::vector<int> content, std::size_t length, int eot_id) {
        if (content.size() > length) throw ContractError("token sequence longer than pad length");
        TokenSequence s;
        s.content_length = content.empty() ? 0 : content.size();
        s.ids = std::move(content);
        s.ids.resize(length, eot_id);
        return s;
    }

    void validate(const Vocabulary& v) const {
        for (int id : ids)
            if (id < 0 || static_cast<std::size_t>(id) >= v.size())
                throw EncodingError("token id out of vocabulary range");
    }

    bool operator==(const TokenSequence& o) const { return ids == o.ids; }
    bool operator<(const TokenSequence& o) const { return ids < o.ids; }
};

/// Whitespace tokenizer against a vocabulary, padded to `length`.
inline TokenSequence tokenize(const Vocabulary& v, const std::string& prompt, std::size_t length) {
    std::istringstream is(prompt);
    std::vector<int> ids;
    std::string tok;
    while (is >> tok) ids.push_back(v.id_of(tok));
    return TokenSequence::pad(std::move(ids), length, v.end_of_text_id());
}

/// Per-token embedding matrix (L x d) plus the sequence it came from.
struct PromptEmbedding {
    Tensor matrix;
    TokenSequence source_tokens;

    std::size_t length() const { return matrix.rows(); }
    std::size_t dim() const { return matrix.cols(); }
};

/// The unconditional embedding slot. Starts as tau(empty prompt); null-text
/// inversion overwrites it per timestep.
struct NullEmbedding {
    Tensor matrix;
};

struct TextEncoderConfig {
    std::size_t length = 8;  // L
    std::size_t dim = 16;    // d_C
    std::size_t blocks = 2;
    std::uint64_t seed = 0x7e57c0de;
};

/// Toy auto-regressive token encoder standing in for the CLIP text stack.
/// Two causal self-attention blocks over learned-at-init (fixed random)
/// token and position tables. Row j of the output depends on tokens 0..j
/// only; that causal propagation is the property the embedding-splice edit
/// relies on.
class CausalTextEncoder {
  public:
    CausalTextEncoder(Vocabulary vocab, TextEncoderConfig cfg = {})
        : vocab_(std::move(vocab)), cfg_(cfg) {
        RngStream rng(cfg_.seed);
        const std::size_t d = cfg_.dim;
        token_table_ = random_matrix(rng, vocab_.size(), d, 1.0);
        pos_table_ = random_matrix(rng, cfg_.length, d, 0.5);
        for (std::size_t b = 0; b < cfg_.blocks; ++b) {
            Block blk;
            blk.wq = random_matrix(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
            blk.wk = random_matrix(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
            blk.wv = random_matrix(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
            blk.wo = random_matrix(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
            blk.w1 = random_matrix(rng, d, 2 * d, 1.0 / std::sqrt(static_cast<double>(d)));
            blk.w2 = random_matrix(rng, 2 * d, d, 1.0 / std::sqrt(2.0 * static_cast<double>(d)));
            blocks_.push_back(std::move(blk));
        }
    }

    const Vocabulary& vocab() const { return vocab_; }
    const TextEncoderConfig& config() const { return cfg_; }

    PromptEmbedding encode(const TokenSequence& seq) const {
        if (seq.length() != cfg_.length)
            throw ShapeError("encode: token sequence length does not match encoder");
        seq.validate(vocab_);
        const std::size_t L = cfg_.length, d = cfg_.dim;
        Tensor h({L, d});
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < d; ++j)
                h[i * d + j] = token_table_[static_cast<std::size_t>(seq.ids[i]) * d + j] +
                               pos_table_[i * d + j];
        for (const Block& blk : blocks_) {
            Tensor q = matmul(h, blk.wq), k = matmul(h, blk.wk), v = matmul(h, blk.wv);
            Tensor att = causal_attention(q, k, v);
            h = add(h, matmul(att, blk.wo));
            h = add(h, matmul(tanh_elem(matmul(h, blk.w1)), blk.w2));
        }
        return PromptEmbedding{std::move(h), seq};
    }

    PromptEmbedding encode_prompt(const std::string& prompt) const {
        return encode(tokenize(vocab_, prompt, cfg_.length));
    }

    NullEmbedding null_embedding() const {
        return NullEmbedding{encode(tokenize(vocab_, "", cfg_.length)).matrix};
    }

  private:
    struct Block {
        Tensor wq, wk, wv, wo, w1, w2;
    };

    static Tensor random_matrix(RngStream& rng, std::size_t n, std::size_t m, double std) {
        Tensor t({n, m});
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std * rng.gaussian();
        return t;
    }

    /// Softmax over keys 0..i for query row i; later positions get zero mass.
    static Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
        const std::size_t L = q.rows(), d = q.cols(), dv = v.cols();
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        Tensor out({L, dv});
        for (std::size_t i = 0; i < L; ++i) {
            std::vector<double> w(i + 1);
            double mx = -1e300;
            for (std::size_t j = 0; j <= i; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[j * d + c];
                w[j] = dot * inv_sqrt_d;
                mx = std::max(mx, w[j]);
            }
            double s = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                w[j] = std::exp(w[j] - mx);
                s += w[j];
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const double p = w[j] / s;
                for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += p * v[j * dv + c];
            }
        }
        return out;
    }

    Vocabulary vocab_;
    TextEncoderConfig cfg_;
    Tensor token_table_;
    Tensor pos_table_;
    std::vector<Block> blocks_;
};

/// Row-level splice: rows listed in `edited` come from tgt, all others from
/// src. This builds the spliced target embedding that keeps unedited token
/// rows pinned to the source prompt.
inline PromptEmbedding splice_embedding(const PromptEmbedding& src, const PromptEmbedding& tgt,
                                        const std::set<std::size_t>& edited) {
    if (!src.matrix.same_shape(tgt.matrix))
        throw ShapeError("splice_embedding: embeddings differ in shape");
    for (std::size_t i : edited)
        if (i >= src.length()) throw ContractError("splice_embedding: edited index out of range");
    PromptEmbedding out = src;
    const std::size_t d = src.dim();
    for (std::size_t i : edited) {
        for (std::size_t j = 0; j < d; ++j)
            out.matrix[i * d + j] = tgt.matrix[i * d + j];
        out.source_tokens.ids[i] = tgt.source_tokens.ids[i];
    }
    return out;
}

/// Positions where two equal-length sequences disagree; the default edited
/// index set for splice-based editing.
inline std::set<std::size_t> differing_positions(const TokenSequence& a, const TokenSequence& b) {
    if (a.length() != b.length())
        throw ContractError("differing_positions: sequences must have equal length");
    std::set<std::size_t> out;
    for (std::size_t i = 0; i < a.length(); ++i)
        if (a.ids[i] != b.ids[i]) out.insert(i);
    return out;
}

} // namespace ledit
