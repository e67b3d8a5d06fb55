#include "remul/tiny_lm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <limits>

#include "remul/error.hpp"

namespace remul {

// ---------------------------------------------------------------------------
// ParamBundle

void ParamBundle::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    if (contains(name)) throw ShapeMismatch("tensor '" + name + "' already present");
    entries_.push_back({std::move(name), rows, cols, values_.size()});
    values_.resize(values_.size() + static_cast<std::size_t>(rows * cols), 0.0);
}

bool ParamBundle::contains(std::string_view name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

const ParamBundle::Entry& ParamBundle::entry(std::string_view name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return e;
    }
    throw ShapeMismatch("no tensor named '" + std::string(name) + "'");
}

MatrixMap ParamBundle::mat(std::string_view name) {
    const Entry& e = entry(name);
    return MatrixMap(values_.data() + e.offset, e.rows, e.cols);
}

ConstMatrixMap ParamBundle::mat(std::string_view name) const {
    const Entry& e = entry(name);
    return ConstMatrixMap(values_.data() + e.offset, e.rows, e.cols);
}

ParamBundle ParamBundle::zeros_like() const {
    ParamBundle out;
    out.entries_ = entries_;
    out.values_.assign(values_.size(), 0.0);
    return out;
}

bool ParamBundle::same_layout(const ParamBundle& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
    }
    return true;
}

std::uint64_t ParamBundle::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : values_) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Tokenizer

namespace {

constexpr std::string_view kPunct = ".?:+=,!()%";

bool is_punct(char c) { return kPunct.find(c) != std::string_view::npos; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<int>(i));
    if (!index_.contains(kUnk) || !index_.contains(kEos)) {
        throw PreconditionError("tokenizer vocabulary needs <unk> and <eos>");
    }
    unk_ = index_.find(kUnk)->second;
    eos_ = index_.find(kEos)->second;
}

Tokenizer Tokenizer::synthetic() {
    std::vector<std::string> v{std::string(kUnk), std::string(kEos), "<think>", "</think>", "\n"};
    for (const char* l : {"A", "B", "C", "D"}) {
        v.push_back(l);
        v.push_back(std::string("#exec:") + l);
    }
    for (char c : kPunct) v.emplace_back(1, c);
    for (const char* w :
         {"Option", "Options", "Answer", "answer", "What", "is", "Add", "and", "So", "the", "result", "Hint", "I",
          "think", "but", "I'm", "curious", "to", "hear", "what", "you", "You", "said", "agree", "with", "hint",
          "Going", "Let", "let", "me", "Wait", "double-check", "sum", "Hmm", "Consider", "each", "option",
          "carefully", "fits", "all", "constraints", "Checking", "remaining", "options", "rules", "them", "out",
          "The", "seems", "clear", "It", "must", "be", "right", "No", "need", "check", "looks", "Done",
          "Confidence", "think", "Following", "reasoning", "so", "far", "cannot", "tell", "Therefore",
          "opposite", "holds", "previous", "step", "wrong", "not", "a", "of", "that", "this", "it"}) {
        if (std::find(v.begin(), v.end(), w) == v.end()) v.emplace_back(w);
    }
    for (int n = 0; n <= 64; ++n) v.push_back(std::to_string(n));
    return Tokenizer(std::move(v));
}

int Tokenizer::id(std::string_view token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? unk_ : it->second;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (is_space(c)) {
            ++i;
            continue;
        }
        if (c == '\n') {
            ids.push_back(id("\n"));
            ++i;
            continue;
        }
        bool special = false;
        for (std::string_view s : {std::string_view("</think>"), std::string_view("<think>")}) {
            if (text.substr(i, s.size()) == s) {
                ids.push_back(id(s));
                i += s.size();
                special = true;
                break;
            }
        }
        if (special) continue;
        if (text.substr(i, 6) == "#exec:") {
            std::size_t end = i + 6;
            while (end < text.size() && std::isalnum(static_cast<unsigned char>(text[end]))) ++end;
            ids.push_back(id(text.substr(i, end - i)));
            i = end;
            continue;
        }
        if (is_punct(c)) {
            ids.push_back(id(text.substr(i, 1)));
            ++i;
            continue;
        }
        std::size_t end = i;
        while (end < text.size() && !is_space(text[end]) && text[end] != '\n' && !is_punct(text[end]) &&
               text[end] != '<') {
            ++end;
        }
        if (end == i) ++end;  // lone '<'
        ids.push_back(id(text.substr(i, end - i)));
        i = end;
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    std::string_view prev;
    for (int t : ids) {
        if (t == eos_) continue;
        const std::string& tok = token(t);
        const bool glue_left = prev.empty() || prev == "\n" || prev == "<think>" || prev == "</think>" ||
                               prev == "(" || tok == "\n" || tok == "</think>" || tok == "<think>" ||
                               (tok.size() == 1 && std::string_view(".?:,!)%").find(tok[0]) != std::string_view::npos);
        if (!glue_left) out += ' ';
        out += tok;
        prev = tok;
    }
    return out;
}

// ---------------------------------------------------------------------------
// TinyLM

void AdapterConfig::validate() const {
    if (rank < 1) throw PreconditionError("adapter rank must be >= 1");
    if (!(scale > 0)) throw PreconditionError("adapter scale must be positive");
    if (!(dropout >= 0 && dropout < 1)) throw PreconditionError("adapter dropout must lie in [0, 1)");
    if (!(learning_rate > 0)) throw PreconditionError("adapter learning rate must be positive");
    if (epochs < 0) throw PreconditionError("adapter epochs must be non-negative");
}

namespace {

constexpr std::string_view kMaps[] = {"wq", "wk", "wv", "wo"};

void fill_normal(MatrixMap m, Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
    }
}

std::string down_name(std::string_view map) { return std::string(map) + ".down"; }
std::string up_name(std::string_view map) { return std::string(map) + ".up"; }

void check_adapter_shapes(const TinyLMConfig& model, const AdapterConfig& config, const ParamBundle& weights) {
    for (const auto& map : config.target_maps) {
        if (std::find(std::begin(kMaps), std::end(kMaps), map) == std::end(kMaps)) {
            throw ShapeMismatch("unknown adapter target map '" + map + "'");
        }
        if (!weights.contains(down_name(map)) || !weights.contains(up_name(map))) {
            throw ShapeMismatch("adapter lacks tensors for map '" + map + "'");
        }
        const auto& down = weights.entry(down_name(map));
        const auto& up = weights.entry(up_name(map));
        if (down.rows != config.rank || down.cols != model.d_model || up.rows != model.d_model ||
            up.cols != config.rank) {
            throw ShapeMismatch("adapter for map '" + map + "' does not match rank " + std::to_string(config.rank) +
                                " and width " + std::to_string(model.d_model));
        }
    }
}

}  // namespace

TinyLM::TinyLM(TinyLMConfig config, std::uint64_t seed) : config_(config) {
    if (config_.vocab < 2 || config_.d_model < 1 || config_.max_len < 2) {
        throw PreconditionError("tiny model needs vocab >= 2, d_model >= 1, max_len >= 2");
    }
    const Eigen::Index v = config_.vocab, d = config_.d_model;
    base_.add("embed", v, d);
    base_.add("pos", config_.max_len, d);
    for (auto map : kMaps) base_.add(std::string(map), d, d);
    base_.add("unembed", v, d);
    base_.add("bias", v, 1);

    Rng rng(derive_seed(seed, 0x7171));
    const double w = 1.0 / std::sqrt(static_cast<double>(d));
    fill_normal(base_.mat("embed"), rng, 0.5);
    fill_normal(base_.mat("pos"), rng, 0.1);
    for (auto map : kMaps) fill_normal(base_.mat(map), rng, w);
    fill_normal(base_.mat("unembed"), rng, w);
}

void TinyLM::attach_adapter(const AdapterConfig& config, std::uint64_t seed) {
    config.validate();
    ParamBundle weights;
    const Eigen::Index d = config_.d_model;
    Rng rng(derive_seed(seed, 0xada));
    for (const auto& map : config.target_maps) {
        weights.add(down_name(map), config.rank, d);
        weights.add(up_name(map), d, config.rank);
    }
    for (const auto& map : config.target_maps) {
        fill_normal(weights.mat(down_name(map)), rng, 1.0 / std::sqrt(static_cast<double>(d)));
    }
    attach_adapter(config, std::move(weights));
}

void TinyLM::attach_adapter(const AdapterConfig& config, ParamBundle weights) {
    config.validate();
    check_adapter_shapes(config_, config, weights);
    adapter_config_ = config;
    adapter_ = std::move(weights);
}

void TinyLM::detach_adapter() { adapter_.reset(); }

Matrix TinyLM::project(std::string_view map, const Matrix& input, ForwardCache* cache, Rng* rng) const {
    Matrix out = input * base_.mat(map).transpose();
    if (!adapter_) return out;
    const auto& targets = adapter_config_.target_maps;
    if (std::find(targets.begin(), targets.end(), map) == targets.end()) return out;

    const double scale = adapter_config_.scale / adapter_config_.rank;
    Matrix in = input;
    Matrix mask;
    if (rng && adapter_config_.dropout > 0) {
        mask.resize(input.rows(), input.cols());
        std::bernoulli_distribution keep(1.0 - adapter_config_.dropout);
        const double inv = 1.0 / (1.0 - adapter_config_.dropout);
        for (Eigen::Index j = 0; j < mask.cols(); ++j) {
            for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(*rng) ? inv : 0.0;
        }
        in = in.cwiseProduct(mask);
    }
    Matrix code = in * adapter_->mat(down_name(map)).transpose();
    out += scale * code * adapter_->mat(up_name(map)).transpose();
    if (cache) {
        const std::string key(map);
        cache->adapter_in[key] = std::move(in);
        cache->adapter_code[key] = std::move(code);
        if (mask.size()) cache->dropout_mask[key] = std::move(mask);
    }
    return out;
}

Matrix TinyLM::forward(std::span<const int> tokens, ForwardCache* cache, Rng* rng) const {
    const auto t_len = static_cast<Eigen::Index>(tokens.size());
    if (t_len == 0) throw PreconditionError("forward needs at least one token");
    if (t_len > config_.max_len) throw PreconditionError("sequence longer than the model context");
    const Eigen::Index d = config_.d_model;

    const auto embed = base_.mat("embed");
    const auto pos = base_.mat("pos");
    Matrix x(t_len, d);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        const int tok = tokens[static_cast<std::size_t>(t)];
        if (tok < 0 || tok >= config_.vocab) throw PreconditionError("token id out of range");
        x.row(t) = embed.row(tok) + pos.row(t);
    }

    Matrix q = project("wq", x, cache, rng);
    Matrix k = project("wk", x, cache, rng);
    Matrix v = project("wv", x, cache, rng);

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix attn = (q * k.transpose()) * inv_sqrt;
    for (Eigen::Index t = 0; t < t_len; ++t) {
        const double mx = attn.row(t).head(t + 1).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j < t_len; ++j) {
            if (j > t) {
                attn(t, j) = 0.0;
            } else {
                attn(t, j) = std::exp(attn(t, j) - mx);
                sum += attn(t, j);
            }
        }
        attn.row(t).head(t + 1) /= sum;
    }
    Matrix o = attn * v;
    Matrix h = x + project("wo", o, cache, rng);
    Matrix logits = h * base_.mat("unembed").transpose();
    logits.rowwise() += base_.mat("bias").col(0).transpose();

    if (cache) {
        cache->tokens.assign(tokens.begin(), tokens.end());
        cache->x = std::move(x);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn);
        cache->o = std::move(o);
        cache->h = std::move(h);
    }
    return logits;
}

Matrix TinyLM::project_backward(std::string_view map, const Matrix& input, const Matrix& dout,
                                const ForwardCache& cache, ParamBundle* base_grad, ParamBundle* adapter_grad) const {
    if (base_grad) base_grad->mat(map) += dout.transpose() * input;
    Matrix din = dout * base_.mat(map);
    if (!adapter_) return din;
    const auto& targets = adapter_config_.target_maps;
    if (std::find(targets.begin(), targets.end(), map) == targets.end()) return din;

    const std::string key(map);
    const double scale = adapter_config_.scale / adapter_config_.rank;
    const Matrix& code = cache.adapter_code.at(key);
    const Matrix& in = cache.adapter_in.at(key);
    const Matrix dcode = scale * dout * adapter_->mat(up_name(map));
    if (adapter_grad) {
        adapter_grad->mat(up_name(map)) += scale * dout.transpose() * code;
        adapter_grad->mat(down_name(map)) += dcode.transpose() * in;
    }
    Matrix din_adapter = dcode * adapter_->mat(down_name(map));
    if (const auto it = cache.dropout_mask.find(key); it != cache.dropout_mask.end()) {
        din_adapter = din_adapter.cwiseProduct(it->second);
    }
    return din + din_adapter;
}

void TinyLM::backward(const ForwardCache& cache, const Matrix& dlogits, ParamBundle* base_grad,
                      ParamBundle* adapter_grad) const {
    const Eigen::Index t_len = cache.x.rows();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(config_.d_model));

    if (base_grad) {
        base_grad->mat("unembed") += dlogits.transpose() * cache.h;
        base_grad->mat("bias").col(0) += dlogits.colwise().sum().transpose();
    }
    const Matrix dh = dlogits * base_.mat("unembed");
    Matrix dx = dh;
    const Matrix d_o = project_backward("wo", cache.o, dh, cache, base_grad, adapter_grad);

    const Matrix dattn = d_o * cache.v.transpose();
    const Matrix dv = cache.attn.transpose() * d_o;
    Matrix dscores(t_len, t_len);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        const double dot = dattn.row(t).dot(cache.attn.row(t));
        for (Eigen::Index j = 0; j < t_len; ++j) {
            dscores(t, j) = cache.attn(t, j) * (dattn(t, j) - dot) * inv_sqrt;
        }
    }
    const Matrix dq = dscores * cache.k;
    const Matrix dk = dscores.transpose() * cache.q;

    dx += project_backward("wq", cache.x, dq, cache, base_grad, adapter_grad);
    dx += project_backward("wk", cache.x, dk, cache, base_grad, adapter_grad);
    dx += project_backward("wv", cache.x, dv, cache, base_grad, adapter_grad);

    if (base_grad) {
        auto dembed = base_grad->mat("embed");
        auto dpos = base_grad->mat("pos");
        for (Eigen::Index t = 0; t < t_len; ++t) {
            dembed.row(cache.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
            dpos.row(t) += dx.row(t);
        }
    }
}

TinyLM merge_adapter(const TinyLM& model, const ParamBundle& adapter, const AdapterConfig& config) {
    config.validate();
    check_adapter_shapes(model.config(), config, adapter);
    TinyLM merged = model;
    merged.detach_adapter();
    const double scale = config.scale / config.rank;
    for (const auto& map : config.target_maps) {
        merged.base().mat(map) += scale * adapter.mat(up_name(map)) * adapter.mat(down_name(map));
    }
    return merged;
}

}  // namespace remul
