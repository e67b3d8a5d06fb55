#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "remul/rng.hpp"

namespace remul {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

// Named dense tensors packed into one contiguous buffer (column-major per
// tensor). Optimizers and checksums work on the flat buffer.
class ParamBundle {
public:
    struct Entry {
        std::string name;
        Eigen::Index rows = 0;
        Eigen::Index cols = 0;
        std::size_t offset = 0;
    };

    void add(std::string name, Eigen::Index rows, Eigen::Index cols);

    bool contains(std::string_view name) const;
    const Entry& entry(std::string_view name) const;  // throws ShapeMismatch when absent
    const std::vector<Entry>& entries() const noexcept { return entries_; }

    MatrixMap mat(std::string_view name);
    ConstMatrixMap mat(std::string_view name) const;

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    // Same layout, all zeros.
    ParamBundle zeros_like() const;
    bool same_layout(const ParamBundle& other) const;

    std::uint64_t checksum() const;

private:
    std::vector<Entry> entries_;
    std::vector<double> values_;
};

// Word-level tokenizer over a closed vocabulary. "<think>", "</think>",
// "#exec:<L>" and "\n" are single tokens; punctuation splits off words.
class Tokenizer {
public:
    static constexpr std::string_view kUnk = "<unk>";
    static constexpr std::string_view kEos = "<eos>";

    explicit Tokenizer(std::vector<std::string> vocab);

    // Vocabulary covering the synthetic addition task and trace templates.
    static Tokenizer synthetic();

    std::size_t size() const noexcept { return vocab_.size(); }
    int id(std::string_view token) const;  // kUnk id when absent
    const std::string& token(int id) const { return vocab_.at(static_cast<std::size_t>(id)); }
    int eos() const { return eos_; }

    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;

    const std::vector<std::string>& vocab() const noexcept { return vocab_; }

private:
    std::vector<std::string> vocab_;
    std::map<std::string, int, std::less<>> index_;
    int unk_ = 0;
    int eos_ = 0;
};

struct TinyLMConfig {
    int vocab = 0;
    int d_model = 16;
    int max_len = 160;
};

struct AdapterConfig {
    int rank = 32;
    double scale = 128.0;  // merged update is (scale / rank) * up * down
    double dropout = 0.05;
    double learning_rate = 1e-5;
    double weight_decay = 0.0;
    int epochs = 5;
    std::vector<std::string> target_maps{"wq", "wk", "wv", "wo"};

    void validate() const;  // throws PreconditionError
};

// Cached activations of one forward pass, consumed by backward().
struct ForwardCache {
    std::vector<int> tokens;
    Matrix x, q, k, v, attn, o, h;
    // Adapter intermediates per target map (inputs after dropout, low-rank codes).
    std::map<std::string, Matrix, std::less<>> adapter_in, adapter_code, dropout_mask;
};

// One-layer, single-head causal attention model:
//   x = E[tok] + P[pos];  h = x + Wo * attention(Wq x, Wk x, Wv x);  logits = U h + b
// The four projections may carry low-rank adapters.
class TinyLM {
public:
    TinyLM() = default;
    TinyLM(TinyLMConfig config, std::uint64_t seed);

    const TinyLMConfig& config() const noexcept { return config_; }
    ParamBundle& base() noexcept { return base_; }
    const ParamBundle& base() const noexcept { return base_; }

    bool has_adapter() const noexcept { return adapter_.has_value(); }
    // Fresh adapter: down-projections random, up-projections zero.
    void attach_adapter(const AdapterConfig& config, std::uint64_t seed);
    // Existing weights; throws ShapeMismatch when shapes do not fit the targets.
    void attach_adapter(const AdapterConfig& config, ParamBundle weights);
    void detach_adapter();
    ParamBundle& adapter() { return adapter_.value(); }
    const ParamBundle& adapter() const { return adapter_.value(); }
    const AdapterConfig& adapter_config() const { return adapter_config_; }

    // Logits per position (rows = tokens.size(), cols = vocab). When `rng` is
    // given, adapter dropout is active.
    Matrix forward(std::span<const int> tokens, ForwardCache* cache = nullptr, Rng* rng = nullptr) const;
    Matrix logits(std::span<const int> tokens) const { return forward(tokens); }

    // Accumulates parameter gradients of a scalar loss given dLoss/dLogits.
    // Either gradient target may be null.
    void backward(const ForwardCache& cache, const Matrix& dlogits, ParamBundle* base_grad,
                  ParamBundle* adapter_grad) const;

private:
    Matrix project(std::string_view map, const Matrix& input, ForwardCache* cache, Rng* rng) const;
    Matrix project_backward(std::string_view map, const Matrix& input, const Matrix& dout, const ForwardCache& cache,
                            ParamBundle* base_grad, ParamBundle* adapter_grad) const;

    TinyLMConfig config_;
    ParamBundle base_;
    std::optional<ParamBundle> adapter_;
    AdapterConfig adapter_config_;
};

// W <- W + (scale / rank) * up * down for every target map. Throws
// ShapeMismatch when the adapter does not fit the model.
TinyLM merge_adapter(const TinyLM& model, const ParamBundle& adapter, const AdapterConfig& config);

}  // namespace remul
