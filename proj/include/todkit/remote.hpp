#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "todkit/backend.hpp"

namespace tod {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 64u << 20;
inline constexpr const char* kEndpointEnv = "TODKIT_ENDPOINT";

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  /// "host:port"; throws ArgumentError.
  static Endpoint parse(std::string_view text);
  std::string str() const { return host + ":" + std::to_string(port); }
};

std::optional<Endpoint> endpoint_from_env();

// Payloads are UTF-8 JSON; each frame is a 4-byte big-endian length
// followed by the payload.
std::string encode_request(const GenerationRequest& request);
GenerationRequest decode_request(std::string_view payload);
std::string encode_response(const GenerationResult& result);
/// Throws ProtocolError on version mismatch, malformed payloads or an
/// error reply.
GenerationResult decode_response(std::string_view payload);

/// One request/response exchange on a fresh connection. Connection failures
/// raise TransportError, deadline expiry TimeoutError.
GenerationResult remote_generate(const Endpoint& endpoint, const GenerationRequest& request,
                                 std::chrono::milliseconds timeout);

class RemoteBackend final : public GenerationBackend {
 public:
  RemoteBackend(Endpoint endpoint, std::chrono::milliseconds timeout) : endpoint_(std::move(endpoint)), timeout_(timeout) {}

  GenerationResult generate(const GenerationRequest& request) const override;
  std::string name() const override { return "remote(" + endpoint_.str() + ")"; }

 private:
  Endpoint endpoint_;
  std::chrono::milliseconds timeout_;
};

/// Threaded frame server: one thread per connection, each frame answered
/// by `handler`. An exception from the handler becomes an error reply.
class FrameServer {
 public:
  using Handler = std::function<std::string(std::string_view payload)>;

  explicit FrameServer(Handler handler, std::uint16_t port = 0, const std::string& host = "127.0.0.1");
  ~FrameServer();
  FrameServer(const FrameServer&) = delete;
  FrameServer& operator=(const FrameServer&) = delete;

  std::uint16_t port() const { return port_; }
  Endpoint endpoint() const { return Endpoint{host_, port_}; }
  void stop();

 private:
  void accept_loop();
  void serve(int fd);

  Handler handler_;
  std::string host_;
  std::uint16_t port_ = 0;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
};

/// Handler that decodes generation requests and serves them from `backend`.
FrameServer::Handler generation_handler(const GenerationBackend& backend);

}  // namespace tod
