#include "remul/listeners.hpp"

#include <set>

#include "remul/datasets.hpp"
#include "remul/error.hpp"
#include "remul/rng.hpp"

namespace remul {

namespace {

constexpr std::string_view kListenerSystem =
    "You are a careful reasoner. Continue the reasoning that has already begun, then close your "
    "thinking and state the final answer as 'Answer: Option <label>'.";

std::string join_steps(const std::vector<std::string>& steps) {
    std::string out;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) out += '\n';
        out += steps[i];
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\n' || s.front() == '\r' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\n' || s.back() == '\r' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    return s;
}

}  // namespace

const std::string& GenerationRequest::user_text() const {
    static const std::string empty;
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == "user") return it->content;
    }
    return empty;
}

std::string GenerationRequest::serialized() const {
    std::string out;
    for (const auto& m : messages) out += "[" + m.role + "]\n" + m.content + "\n";
    out += "[assistant]\n" + assistant_prefix;
    return out;
}

std::string_view to_string(ListenerBackend backend) {
    switch (backend) {
        case ListenerBackend::scripted: return "scripted";
        case ListenerBackend::endpoint: return "endpoint";
        case ListenerBackend::local_toy: return "local_toy";
    }
    return "scripted";
}

ListenerBackend listener_backend_from_string(std::string_view name) {
    if (name == "scripted") return ListenerBackend::scripted;
    if (name == "endpoint") return ListenerBackend::endpoint;
    if (name == "local_toy") return ListenerBackend::local_toy;
    throw ConfigError("unknown listener backend '" + std::string(name) + "'");
}

Decoding default_listener_decoding(std::size_t index) {
    Decoding d;
    d.temperature = index == 0 ? 1.1 : 0.9;
    d.top_p = 0.9;
    d.repetition_penalty = 1.1;
    return d;
}

ListenerPool::ListenerPool(std::vector<ListenerSpec> listeners) : listeners_(std::move(listeners)) {
    if (listeners_.empty()) throw PreconditionError("listener pool must hold at least one listener");
    std::set<std::string> names;
    for (const auto& l : listeners_) {
        if (!names.insert(l.name).second) throw PreconditionError("duplicate listener name '" + l.name + "'");
        if (!l.decoding.valid()) throw PreconditionError("listener '" + l.name + "' has non-positive decoding");
        if (!l.model) throw PreconditionError("listener '" + l.name + "' has no model");
    }
}

ListenerPool scripted_pool(std::size_t count) {
    std::vector<ListenerSpec> specs;
    for (std::size_t i = 0; i < count; ++i) {
        ListenerSpec spec;
        spec.name = "listener-" + std::to_string(i);
        spec.backend = ListenerBackend::scripted;
        spec.decoding = default_listener_decoding(i);
        spec.model = std::make_shared<ScriptedListener>(spec.name);
        specs.push_back(std::move(spec));
    }
    return ListenerPool(std::move(specs));
}

GenerationRequest listener_request(const ListenerSpec& listener, const QAItem& item, const TracePrefix& prefix,
                                   std::uint64_t seed) {
    GenerationRequest request;
    request.messages = {{"system", std::string(kListenerSystem)}, {"user", build_prompt(item)}};
    request.assistant_prefix = std::string(kThinkOpen) + join_steps(prefix.steps) + "\n";
    request.decoding = listener.decoding;
    request.seed = seed;
    return request;
}

ListenerVerdict soft_execute(const ListenerSpec& listener, const QAItem& item, const TracePrefix& prefix,
                             std::uint64_t seed) {
    ListenerVerdict verdict;
    verdict.listener = listener.name;
    verdict.fraction = prefix.fraction;
    const auto start = std::chrono::steady_clock::now();
    try {
        const auto request = listener_request(listener, item, prefix, seed);
        verdict.completion = listener.model->generate(request);
        // The continuation resumes an open thinking segment, so everything up
        // to "</think>" is thinking and the answer follows it.
        const std::size_t close = verdict.completion.find(kThinkClose);
        const std::string_view answer_part = close == std::string::npos
                                                 ? std::string_view(verdict.completion)
                                                 : std::string_view(verdict.completion).substr(close);
        verdict.answer = extract_answer(answer_part, item.options);
    } catch (const std::exception&) {
        verdict.completion.clear();
        verdict.answer = AnswerLabel::unparsed();
        verdict.degraded = true;
    }
    verdict.latency = std::chrono::steady_clock::now() - start;
    return verdict;
}

VerdictMatrix pool_execute_serial(const ListenerPool& pool, const QAItem& item, const TruncationSet& tset,
                                  std::uint64_t seed) {
    if (tset.prefixes.empty()) throw PreconditionError("pool_execute needs at least one prefix");
    VerdictMatrix matrix(pool.size(), tset.prefixes.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        for (std::size_t j = 0; j < tset.prefixes.size(); ++j) {
            matrix.at(i, j) = soft_execute(pool[i], item, tset.prefixes[j], derive_seed(seed, i, j));
        }
    }
    return matrix;
}

VerdictMatrix pool_execute(const ListenerPool& pool, const QAItem& item, const TruncationSet& tset,
                           std::uint64_t seed) {
    if (tset.prefixes.empty()) throw PreconditionError("pool_execute needs at least one prefix");
    VerdictMatrix matrix(pool.size(), tset.prefixes.size());
    const auto cols = static_cast<long>(tset.prefixes.size());
    const auto cells = static_cast<long>(pool.size()) * cols;
#pragma omp parallel for schedule(dynamic)
    for (long c = 0; c < cells; ++c) {
        const auto i = static_cast<std::size_t>(c / cols);
        const auto j = static_cast<std::size_t>(c % cols);
        // soft_execute absorbs every exception into a degraded verdict.
        matrix.at(i, j) = soft_execute(pool[i], item, tset.prefixes[j], derive_seed(seed, i, j));
    }
    return matrix;
}

std::vector<Option> options_in_prompt(std::string_view prompt) {
    std::vector<Option> options;
    std::size_t start = 0;
    while (start < prompt.size()) {
        std::size_t end = prompt.find('\n', start);
        if (end == std::string_view::npos) end = prompt.size();
        std::string_view line = prompt.substr(start, end - start);
        constexpr std::string_view kLead = "Option ";
        if (line.substr(0, kLead.size()) == kLead) {
            const std::size_t colon = line.find(':', kLead.size());
            if (colon != std::string_view::npos && colon > kLead.size()) {
                std::string label(line.substr(kLead.size(), colon - kLead.size()));
                if (label.find(' ') == std::string::npos) {
                    options.push_back({std::move(label), std::string(trim(line.substr(colon + 1)))});
                }
            }
        }
        start = end + 1;
    }
    return options;
}

std::string prefix_thinking(std::string_view assistant_prefix) {
    std::string_view body = assistant_prefix;
    if (const auto open = body.find(kThinkOpen); open != std::string_view::npos) {
        body.remove_prefix(open + kThinkOpen.size());
    }
    if (const auto close = body.find(kThinkClose); close != std::string_view::npos) {
        body = body.substr(0, close);
    }
    return std::string(trim(body));
}

AnswerLabel ScriptedListener::decide(std::string_view thinking, const std::vector<Option>& options) const {
    if (options.empty()) return AnswerLabel::unparsed();
    AnswerLabel directed;
    std::size_t start = 0;
    while (start <= thinking.size()) {
        std::size_t end = thinking.find('\n', start);
        if (end == std::string_view::npos) end = thinking.size();
        const std::string_view line = trim(thinking.substr(start, end - start));
        if (line.substr(0, kExecDirective.size()) == kExecDirective) {
            const std::string label(trim(line.substr(kExecDirective.size())));
            for (const auto& o : options) {
                if (o.label == label) directed = AnswerLabel{label};
            }
        }
        start = end + 1;
    }
    if (directed.parsed()) return directed;
    const std::uint64_t h = stable_hash(name_ + std::string(thinking));
    return AnswerLabel{options[h % options.size()].label};
}

std::string ScriptedListener::generate(const GenerationRequest& request) const {
    const auto options = options_in_prompt(request.user_text());
    const std::string thinking = prefix_thinking(request.assistant_prefix);
    const AnswerLabel answer = decide(thinking, options);
    const bool closed = request.assistant_prefix.find(kThinkClose) != std::string::npos;
    if (!answer.parsed()) return closed ? std::string("I cannot tell.") : std::string("I cannot tell.\n</think>");
    if (closed) return " Option " + answer.value();
    return "Following the reasoning so far.\n" + std::string(kThinkClose) + answer_sentence(answer.value());
}

}  // namespace remul
