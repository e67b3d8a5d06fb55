#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace remul {

struct Decoding {
    double temperature = 1.0;
    double top_p = 1.0;
    double repetition_penalty = 1.0;
    int max_tokens = 2048;

    bool valid() const { return temperature > 0 && top_p > 0 && repetition_penalty > 0 && max_tokens > 0; }
};

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;
};

// One generation call. `assistant_prefix` is text the assistant turn already
// begins with; the model returns only what it generates after it.
struct GenerationRequest {
    std::vector<ChatMessage> messages;
    std::string assistant_prefix;
    Decoding decoding;
    std::uint64_t seed = 0;

    const std::string& user_text() const;
    // Everything the model conditions on, flattened. Used for blindness checks.
    std::string serialized() const;
};

// Anything that turns a request into text: scripted listeners, endpoint
// clients, toy policies. Implementations must be safe to call concurrently.
class TextModel {
public:
    virtual ~TextModel() = default;
    virtual std::string name() const = 0;
    // May throw TransportError.
    virtual std::string generate(const GenerationRequest& request) const = 0;
};

}  // namespace remul
