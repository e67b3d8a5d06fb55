#include "remul/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "remul/error.hpp"

namespace remul {

using nlohmann::json;

namespace {

json bundle_json(const ParamBundle& bundle) {
    json tensors = json::array();
    const auto values = bundle.values();
    for (const auto& e : bundle.entries()) {
        const auto n = static_cast<std::size_t>(e.rows * e.cols);
        tensors.push_back({{"name", e.name},
                           {"rows", e.rows},
                           {"cols", e.cols},
                           {"values", std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(e.offset),
                                                          values.begin() + static_cast<std::ptrdiff_t>(e.offset + n))}});
    }
    return tensors;
}

ParamBundle bundle_of(const json& tensors) {
    ParamBundle b;
    for (const auto& t : tensors) {
        const auto rows = t.at("rows").get<Eigen::Index>();
        const auto cols = t.at("cols").get<Eigen::Index>();
        const auto& vals = t.at("values");
        if (rows < 0 || cols < 0 || vals.size() != static_cast<std::size_t>(rows * cols)) {
            throw ShapeMismatch("tensor '" + t.at("name").get<std::string>() + "' has inconsistent shape");
        }
        const std::string name = t.at("name").get<std::string>();
        b.add(name, rows, cols);
        auto m = b.mat(name);
        for (Eigen::Index i = 0; i < rows * cols; ++i) m.data()[i] = vals[static_cast<std::size_t>(i)].get<double>();
    }
    return b;
}

json parse(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
}

}  // namespace

std::string bundle_to_json(const ParamBundle& bundle) { return json{{"tensors", bundle_json(bundle)}}.dump(); }

ParamBundle bundle_from_json(const std::string& text) {
    const json j = parse(text);
    try {
        return bundle_of(j.at("tensors"));
    } catch (const json::exception& e) {
        throw ShapeMismatch(std::string("malformed tensor bundle: ") + e.what());
    }
}

std::string policy_to_json(const Policy& policy) {
    json j;
    j["kind"] = std::string(to_string(policy.kind()));
    j["name"] = policy.name();
    const auto& d = policy.decoding();
    j["decoding"] = {{"temperature", d.temperature}, {"top_p", d.top_p}, {"repetition_penalty", d.repetition_penalty}};
    if (const auto* t = dynamic_cast<const TemplatePolicy*>(&policy)) {
        const auto p = t->parameters();
        j["logits"] = std::vector<double>(p.begin(), p.end());
    } else if (const auto* lm = dynamic_cast<const TinyLMPolicy*>(&policy)) {
        const auto& c = lm->model().config();
        j["config"] = {{"vocab", c.vocab}, {"d_model", c.d_model}, {"max_len", c.max_len}};
        j["max_new_tokens"] = lm->max_new_tokens();
        j["tensors"] = bundle_json(lm->model().base());
    }
    return j.dump();
}

std::unique_ptr<Policy> policy_from_json(const std::string& text) {
    const json j = parse(text);
    try {
        const PolicyKind kind = policy_kind_from_string(j.at("kind").get<std::string>());
        Decoding d;
        d.temperature = j.at("decoding").at("temperature").get<double>();
        d.top_p = j.at("decoding").at("top_p").get<double>();
        d.repetition_penalty = j.at("decoding").at("repetition_penalty").get<double>();
        std::unique_ptr<Policy> out;
        if (kind == PolicyKind::template_policy) {
            out = std::make_unique<TemplatePolicy>(j.at("logits").get<std::vector<double>>(),
                                                   j.at("name").get<std::string>());
        } else {
            TinyLMConfig c;
            c.vocab = j.at("config").at("vocab").get<int>();
            c.d_model = j.at("config").at("d_model").get<int>();
            c.max_len = j.at("config").at("max_len").get<int>();
            TinyLM model(c, 0);
            const ParamBundle weights = bundle_of(j.at("tensors"));
            if (!weights.same_layout(model.base())) throw ShapeMismatch("checkpoint tensors do not fit the model");
            std::copy(weights.values().begin(), weights.values().end(), model.base().values().begin());
            out = std::make_unique<TinyLMPolicy>(std::move(model), Tokenizer::synthetic(),
                                                 j.at("max_new_tokens").get<int>(), j.at("name").get<std::string>());
        }
        out->set_decoding(d);
        return out;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed policy checkpoint: ") + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace remul
