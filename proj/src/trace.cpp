#include "remul/trace.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "remul/error.hpp"

namespace remul {

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

struct Match {
    std::size_t pos;
    std::string label;
};

// Labels sorted longest first so "AB" wins over "A" at the same position.
std::vector<std::string> sorted_labels(const std::vector<Option>& options) {
    std::vector<std::string> labels;
    labels.reserve(options.size());
    for (const auto& o : options) labels.push_back(o.label);
    std::stable_sort(labels.begin(), labels.end(),
                     [](const auto& a, const auto& b) { return a.size() > b.size(); });
    return labels;
}

// Matches a label at `pos` followed by a non-alphanumeric boundary. Labels
// are case-sensitive so "answer is a bit" never reads as option A.
const std::string* label_at(std::string_view text, std::size_t pos,
                            const std::vector<std::string>& labels) {
    for (const auto& label : labels) {
        if (label.empty() || text.compare(pos, label.size(), label) != 0) continue;
        const std::size_t end = pos + label.size();
        if (end < text.size() && is_alnum(text[end])) continue;
        return &label;
    }
    return nullptr;
}

std::size_t skip_filler(std::string_view text, std::size_t pos) {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t' || text[pos] == '*' ||
                                 text[pos] == '(' || text[pos] == ':')) {
        ++pos;
    }
    return pos;
}

bool word_start(std::string_view text, std::size_t pos) {
    return pos == 0 || !is_alnum(text[pos - 1]);
}

void scan_keyword(std::string_view text, std::string_view lower, std::string_view keyword,
                  const std::vector<std::string>& labels, bool allow_is, std::vector<Match>& out) {
    for (std::size_t at = lower.find(keyword); at != std::string_view::npos;
         at = lower.find(keyword, at + 1)) {
        if (!word_start(lower, at)) continue;
        std::size_t pos = skip_filler(text, at + keyword.size());
        if (allow_is && lower.substr(pos, 2) == "is" &&
            (pos + 2 >= lower.size() || !is_alnum(lower[pos + 2]))) {
            pos = skip_filler(text, pos + 2);
        }
        if (allow_is && lower.substr(pos, 6) == "option") {
            pos = skip_filler(text, pos + 6);
        }
        if (pos >= text.size()) continue;
        if (const auto* label = label_at(text, pos, labels)) out.push_back({pos, *label});
    }
}

}  // namespace

std::string_view to_string(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::bbh: return "bbh";
        case DatasetKind::bbeh: return "bbeh";
        case DatasetKind::zlb: return "zlb";
        case DatasetKind::musr: return "musr";
        case DatasetKind::folio: return "folio";
        case DatasetKind::synthetic: return "synthetic";
    }
    return "synthetic";
}

DatasetKind dataset_kind_from_string(std::string_view name) {
    const std::string n = lowercase(name);
    if (n == "bbh") return DatasetKind::bbh;
    if (n == "bbeh") return DatasetKind::bbeh;
    if (n == "zlb") return DatasetKind::zlb;
    if (n == "musr") return DatasetKind::musr;
    if (n == "folio") return DatasetKind::folio;
    if (n == "synthetic") return DatasetKind::synthetic;
    throw UnknownDataset("unknown dataset tag '" + std::string(name) + "'");
}

const Option* QAItem::find_option(std::string_view label) const {
    for (const auto& o : options) {
        if (o.label == label) return &o;
    }
    return nullptr;
}

void QAItem::validate() const {
    if (options.empty()) throw PreconditionError("item '" + id + "' has no options");
    std::set<std::string> seen;
    for (const auto& o : options) {
        if (o.label.empty()) throw PreconditionError("item '" + id + "' has an empty option label");
        if (!seen.insert(o.label).second) {
            throw PreconditionError("item '" + id + "' repeats option label " + o.label);
        }
    }
    if (!seen.contains(gold)) {
        throw PreconditionError("item '" + id + "' gold '" + gold + "' is not an option label");
    }
}

SplitMode split_mode_from_string(std::string_view name) {
    if (name == "newline") return SplitMode::newline;
    if (name == "sentence") return SplitMode::sentence;
    throw PreconditionError("unknown split mode '" + std::string(name) + "'");
}

std::string_view step_delimiter(SplitMode mode) {
    return mode == SplitMode::newline ? "\n" : " ";
}

std::vector<std::string> split_steps(std::string_view thinking, SplitMode mode) {
    std::vector<std::string> steps;
    if (mode == SplitMode::newline) {
        std::size_t start = 0;
        while (start <= thinking.size()) {
            std::size_t end = thinking.find('\n', start);
            if (end == std::string_view::npos) end = thinking.size();
            std::string_view line = thinking.substr(start, end - start);
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            if (!trim(line).empty()) steps.emplace_back(line);
            start = end + 1;
        }
        return steps;
    }

    // Sentence mode: a step ends at [.?!] followed by whitespace, or at a newline.
    std::size_t start = 0;
    auto flush = [&](std::size_t end) {
        std::string_view piece = trim(thinking.substr(start, end - start));
        if (!piece.empty()) steps.emplace_back(piece);
    };
    for (std::size_t i = 0; i < thinking.size(); ++i) {
        const char c = thinking[i];
        if (c == '\n') {
            flush(i);
            start = i + 1;
        } else if ((c == '.' || c == '?' || c == '!') && i + 1 < thinking.size() &&
                   is_space(thinking[i + 1])) {
            flush(i + 1);
            start = i + 1;
        }
    }
    if (start < thinking.size()) flush(thinking.size());
    return steps;
}

AnswerLabel extract_answer(std::string_view answer_text, const std::vector<Option>& options) {
    if (options.empty() || answer_text.empty()) return AnswerLabel::unparsed();
    const auto labels = sorted_labels(options);
    const std::string lower = lowercase(answer_text);

    std::vector<Match> matches;
    scan_keyword(answer_text, lower, "option", labels, false, matches);
    scan_keyword(answer_text, lower, "answer", labels, true, matches);

    // Bare label on its own line, optionally wrapped as "(L)" or "L.".
    std::size_t line_start = 0;
    while (line_start <= answer_text.size()) {
        std::size_t line_end = answer_text.find('\n', line_start);
        if (line_end == std::string_view::npos) line_end = answer_text.size();
        std::string_view line = trim(answer_text.substr(line_start, line_end - line_start));
        while (!line.empty() && (line.front() == '*' || line.front() == '(')) line.remove_prefix(1);
        while (!line.empty() && (line.back() == '*' || line.back() == ')' || line.back() == '.')) {
            line.remove_suffix(1);
        }
        for (const auto& label : labels) {
            if (line == label) {
                matches.push_back({static_cast<std::size_t>(line.data() - answer_text.data()), label});
                break;
            }
        }
        line_start = line_end + 1;
    }

    for (const auto& option : options) {
        const std::string& t = option.text;
        if (t.empty()) continue;
        for (std::size_t at = answer_text.find(t); at != std::string_view::npos;
             at = answer_text.find(t, at + 1)) {
            const bool left_ok = !is_alnum(t.front()) || word_start(answer_text, at);
            const std::size_t end = at + t.size();
            const bool right_ok = !is_alnum(t.back()) || end >= answer_text.size() ||
                                  !is_alnum(answer_text[end]);
            if (left_ok && right_ok) matches.push_back({at, option.label});
        }
    }

    if (matches.empty()) return AnswerLabel::unparsed();
    const auto last = std::max_element(matches.begin(), matches.end(),
                                       [](const Match& a, const Match& b) { return a.pos < b.pos; });
    return AnswerLabel{last->label};
}

ReasoningTrace parse_trace(std::string_view raw, const std::vector<Option>& options, SplitMode mode) {
    if (raw.empty()) throw PreconditionError("parse_trace: raw text is empty");
    ReasoningTrace trace;
    trace.raw = std::string(raw);
    trace.split_mode = mode;

    const std::size_t open = raw.find(kThinkOpen);
    if (open != std::string_view::npos) {
        const std::size_t body = open + kThinkOpen.size();
        const std::size_t close = raw.find(kThinkClose, body);
        if (close == std::string_view::npos) {
            throw MalformedTrace("opening think delimiter has no closing delimiter");
        }
        trace.thinking = std::string(raw.substr(body, close - body));
        trace.answer_text = std::string(raw.substr(close + kThinkClose.size()));
    } else if (const std::size_t close = raw.find(kThinkClose); close != std::string_view::npos) {
        // Continuations resume an already-open thinking segment.
        trace.thinking = std::string(raw.substr(0, close));
        trace.answer_text = std::string(raw.substr(close + kThinkClose.size()));
    } else {
        trace.degraded = true;
        // The answer sentence is the last line that parses to a label.
        std::size_t split = raw.size();
        std::size_t end = raw.size();
        while (true) {
            const std::size_t nl = end == 0 ? std::string_view::npos : raw.rfind('\n', end - 1);
            const std::size_t begin = nl == std::string_view::npos ? 0 : nl + 1;
            std::string_view line = raw.substr(begin, end - begin);
            if (!trim(line).empty()) {
                if (extract_answer(line, options).parsed()) split = begin;
                break;
            }
            if (nl == std::string_view::npos) break;
            end = nl;
        }
        std::string_view thinking = raw.substr(0, split);
        if (!thinking.empty() && thinking.back() == '\n') thinking.remove_suffix(1);
        trace.thinking = std::string(thinking);
        trace.answer_text = std::string(raw.substr(split));
    }

    trace.steps = split_steps(trace.thinking, mode);
    trace.answer = extract_answer(trace.answer_text, options);
    return trace;
}

std::string answer_sentence(std::string_view label) {
    if (label.empty()) return {};
    return "Answer: Option " + std::string(label);
}

std::string render_trace(const std::vector<std::string>& steps, std::string_view answer_label) {
    std::string out(kThinkOpen);
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) out += '\n';
        out += steps[i];
    }
    out += kThinkClose;
    out += answer_sentence(answer_label);
    return out;
}

}  // namespace remul
