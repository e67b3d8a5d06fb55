#pragma once

#include <string>

#include "remul/text_model.hpp"

namespace remul {

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8000";  // scheme://host:port
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key;          // literal; overridden by api_key_env when set
    std::string api_key_env;      // environment variable holding the key
    double timeout_seconds = 120.0;
    int retries = 2;              // extra attempts after the first
};

// Chat-completion client. The assistant prefix is sent as a trailing
// assistant message and continued in place (vLLM-style
// `continue_final_message`). Throws TransportError once retries run out.
class EndpointModel final : public TextModel {
public:
    explicit EndpointModel(EndpointConfig config, std::string name = {});

    std::string name() const override { return name_; }
    std::string generate(const GenerationRequest& request) const override;

    const EndpointConfig& config() const noexcept { return config_; }

private:
    EndpointConfig config_;
    std::string name_;
    std::string api_key_;
};

// Request body sent for `request` (exposed for wire-format tests).
std::string chat_completion_body(const GenerationRequest& request, const std::string& model);
// Extracts generated text from a response body; throws TransportError.
std::string chat_completion_text(const std::string& body);

}  // namespace remul
