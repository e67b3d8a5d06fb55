#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "remul/text_model.hpp"
#include "remul/trace.hpp"
#include "remul/truncation.hpp"

namespace remul {

enum class ListenerBackend { scripted, endpoint, local_toy };

std::string_view to_string(ListenerBackend backend);
ListenerBackend listener_backend_from_string(std::string_view name);

struct ListenerSpec {
    std::string name;
    ListenerBackend backend = ListenerBackend::scripted;
    Decoding decoding;
    std::string prompt_template = "default";
    std::shared_ptr<const TextModel> model;
};

// Listener decodings used in the reference setup: repetition penalty 1.1,
// nucleus 0.9, temperatures 1.1 / 0.9 / 0.9.
Decoding default_listener_decoding(std::size_t index);

class ListenerPool {
public:
    ListenerPool() = default;
    explicit ListenerPool(std::vector<ListenerSpec> listeners);  // throws PreconditionError

    std::size_t size() const noexcept { return listeners_.size(); }
    const std::vector<ListenerSpec>& listeners() const noexcept { return listeners_; }
    const ListenerSpec& operator[](std::size_t i) const { return listeners_.at(i); }

private:
    std::vector<ListenerSpec> listeners_;
};

// Pool of `count` scripted listeners named listener-0 ... listener-{count-1}.
ListenerPool scripted_pool(std::size_t count);

struct ListenerVerdict {
    std::string listener;
    double fraction = 0.0;
    std::string completion;
    AnswerLabel answer;
    std::chrono::duration<double> latency{0.0};
    bool degraded = false;
};

class VerdictMatrix {
public:
    VerdictMatrix() = default;
    VerdictMatrix(std::size_t listeners, std::size_t prefixes)
        : rows_(listeners), cols_(prefixes), cells_(listeners * prefixes) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return cells_.size(); }

    ListenerVerdict& at(std::size_t listener, std::size_t prefix) { return cells_.at(listener * cols_ + prefix); }
    const ListenerVerdict& at(std::size_t listener, std::size_t prefix) const {
        return cells_.at(listener * cols_ + prefix);
    }
    const std::vector<ListenerVerdict>& cells() const noexcept { return cells_; }
    std::vector<ListenerVerdict>& cells() noexcept { return cells_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<ListenerVerdict> cells_;
};

// The listener sees the item prompt and an unclosed thinking segment holding
// the prefix steps. The speaker's answer is never part of the request.
GenerationRequest listener_request(const ListenerSpec& listener, const QAItem& item,
                                   const TracePrefix& prefix, std::uint64_t seed = 0);

ListenerVerdict soft_execute(const ListenerSpec& listener, const QAItem& item, const TracePrefix& prefix,
                             std::uint64_t seed = 0);

// One verdict per (listener, prefix), laid out listener-major. Cells run in
// parallel; the serial variant is the reference used by tests.
VerdictMatrix pool_execute(const ListenerPool& pool, const QAItem& item, const TruncationSet& tset,
                           std::uint64_t seed = 0);
VerdictMatrix pool_execute_serial(const ListenerPool& pool, const QAItem& item, const TruncationSet& tset,
                                  std::uint64_t seed = 0);

// Directive line that marks a step as executable for scripted models.
inline constexpr std::string_view kExecDirective = "#exec:";

// Option labels announced in a prompt as "Option <L>: ..." lines.
std::vector<Option> options_in_prompt(std::string_view prompt);

// Stateless stand-in for a listener model. Reads the thinking text in the
// assistant prefix: the last "#exec:<L>" directive line decides the answer;
// without one, the answer is options[stable_hash(name + thinking) % |options|].
class ScriptedListener final : public TextModel {
public:
    explicit ScriptedListener(std::string name) : name_(std::move(name)) {}

    std::string name() const override { return name_; }
    std::string generate(const GenerationRequest& request) const override;

    AnswerLabel decide(std::string_view thinking, const std::vector<Option>& options) const;

private:
    std::string name_;
};

// Thinking text held in an assistant prefix: the part after "<think>" and
// before "</think>" (if present), without surrounding newlines.
std::string prefix_thinking(std::string_view assistant_prefix);

}  // namespace remul
