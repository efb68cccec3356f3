#include "todkit/backend.hpp"

#include <thread>

#include "todkit/dialogue.hpp"

namespace tod {

GenerationResult StubBackend::generate(const GenerationRequest& request) const {
  const auto start = std::chrono::steady_clock::now();
  auto tokens = split_tokens(responder_ ? responder_(request.input) : std::string());
  if (tokens.size() > request.max_tokens) tokens.resize(request.max_tokens);
  std::this_thread::sleep_until(start + latency_);
  GenerationResult r;
  r.output = join_tokens(tokens);
  r.token_count = tokens.size();
  r.duration = std::chrono::steady_clock::now() - start;
  return r;
}

}  // namespace tod
