#include "remul/endpoint.hpp"

#include <cstdlib>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "remul/error.hpp"

namespace remul {

using nlohmann::json;

EndpointModel::EndpointModel(EndpointConfig config, std::string name)
    : config_(std::move(config)), name_(std::move(name)) {
    if (name_.empty()) name_ = config_.model.empty() ? config_.base_url : config_.model;
    api_key_ = config_.api_key;
    if (!config_.api_key_env.empty()) {
        if (const char* env = std::getenv(config_.api_key_env.c_str()); env && *env) api_key_ = env;
    }
}

std::string chat_completion_body(const GenerationRequest& request, const std::string& model) {
    json messages = json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    const bool has_prefix = !request.assistant_prefix.empty();
    if (has_prefix) messages.push_back({{"role", "assistant"}, {"content", request.assistant_prefix}});
    json body = {
        {"model", model},
        {"messages", messages},
        {"temperature", request.decoding.temperature},
        {"top_p", request.decoding.top_p},
        {"repetition_penalty", request.decoding.repetition_penalty},
        {"max_tokens", request.decoding.max_tokens},
        {"seed", request.seed},
    };
    if (has_prefix) {
        body["continue_final_message"] = true;
        body["add_generation_prompt"] = false;
    }
    return body.dump();
}

std::string chat_completion_text(const std::string& body) {
    try {
        const json response = json::parse(body);
        const json& choice = response.at("choices").at(0);
        if (choice.contains("message")) return choice["message"].at("content").get<std::string>();
        return choice.at("text").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError(std::string("malformed completion response: ") + e.what());
    }
}

std::string EndpointModel::generate(const GenerationRequest& request) const {
    const std::string body = chat_completion_body(request, config_.model);
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        httplib::Client client(config_.base_url);
        const auto secs = static_cast<time_t>(config_.timeout_seconds);
        const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

        const auto result = client.Post(config_.path, headers, body, "application/json");
        if (!result) {
            last_error = "transport failure: " + httplib::to_string(result.error());
            continue;
        }
        if (result->status != 200) {
            last_error = "HTTP " + std::to_string(result->status);
            // Client errors will not improve on retry.
            if (result->status >= 400 && result->status < 500 && result->status != 429) break;
            continue;
        }
        return chat_completion_text(result->body);
    }
    throw TransportError("endpoint '" + name_ + "': " + last_error);
}

}  // namespace remul
