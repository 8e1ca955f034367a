#pragma once

#include <memory>
#include <string>

#include "oxad/engine_loop.hpp"

namespace oxad {

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::size_t subscriber_buffer = 1024;
};

// HTTP control plane and server-sent-event data plane over an EngineLoop.
//
//   GET  /health                     {status, version}
//   GET  /status                     loop status
//   POST /ingest/start               SourceSpec -> 202 | 400 | 409
//   GET  /stream                     text/event-stream of record/event/mark
//   GET  /pdp/{feature}              PdpSnapshot | 404
//   GET  /threshold, PUT /threshold  {value}
//   GET  /threshold/suggestion       {threshold, f1} | 409
//   GET  /features, PUT /features/{name} {enabled} -> 204 | 404 | 409
//   GET  /events, GET /labels, POST /labels
//   POST /runs/mark {note}, GET /runs
//   GET  /snapshot                   EngineSnapshot
//
// Every non-2xx response body is {status, code, message}.
class Service {
 public:
  explicit Service(EngineLoop& loop);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Returns false when the address cannot be bound.
  bool bind(const std::string& host, int port);
  // Binds an ephemeral port and returns it (-1 on failure).
  int bind_any(const std::string& host);
  // Serves until stop(); call after a successful bind.
  bool listen();
  void stop();
  bool running() const;
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

const char* version();

}  // namespace oxad
