#pragma once

#include <chrono>
#include <functional>
#include <string>

#include "todkit/seq2seq.hpp"

namespace tod {

/// Anything that maps an input text to an output text.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual GenerationResult generate(const GenerationRequest& request) const = 0;
  /// Whether independent requests may run in parallel.
  virtual bool concurrent() const { return true; }
  virtual std::string name() const = 0;
};

class ReferenceBackend final : public GenerationBackend {
 public:
  explicit ReferenceBackend(const Seq2SeqModel& model) : model_(model) {}
  GenerationResult generate(const GenerationRequest& request) const override { return model_.generate(request); }
  std::string name() const override { return "reference"; }

 private:
  const Seq2SeqModel& model_;
};

/// Fixed-latency backend whose output is a function of the input. Used for
/// timing oracles and pipeline tests.
class StubBackend final : public GenerationBackend {
 public:
  using Responder = std::function<std::string(const std::string& input)>;

  StubBackend(std::chrono::microseconds latency, Responder responder)
      : latency_(latency), responder_(std::move(responder)) {}

  GenerationResult generate(const GenerationRequest& request) const override;
  std::string name() const override { return "stub"; }

 private:
  std::chrono::microseconds latency_;
  Responder responder_;
};

}  // namespace tod
