#include "oxad/service.hpp"

#include <httplib.h>

#include <chrono>

#include "oxad/json_io.hpp"

namespace oxad {

using namespace std::chrono_literals;

const char* version() { return OXAD_VERSION; }

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, json{{"status", status}, {"code", code}, {"message", message}});
}

std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) {
    send_error(res, 400, "bad_json", "request body must be a JSON object");
    return std::nullopt;
  }
  return body;
}

std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

struct Service::Impl {
  EngineLoop& loop;
  httplib::Server server;

  explicit Impl(EngineLoop& l) : loop(l) {
    // SO_REUSEADDR only: with SO_REUSEPORT a second server would share the port.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });
    routes();
  }

  void routes() {
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, json{{"status", "ok"}, {"version", version()}});
    });

    server.Get("/status", [this](const httplib::Request&, httplib::Response& res) {
      const auto s = loop.status();
      send_json(res, 200,
                json{{"running", s.running}, {"processed", s.processed}, {"rejected", s.rejected},
                     {"last_error", s.last_error}, {"subscribers", loop.subscribers()}});
    });

    server.Post("/ingest/start", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req, res);
      if (!body) return;
      SourceSpec spec;
      try {
        body->get_to(spec);
        if (!loop.start(spec)) {
          send_error(res, 409, "source_active", "a source is already being consumed");
          return;
        }
      } catch (const IngestError& e) {
        json err{{"status", 400}, {"code", "bad_source"}, {"message", e.what()}};
        if (!e.column().empty()) err["column"] = e.column();
        send_json(res, 400, err);
        return;
      } catch (const std::exception& e) {
        send_error(res, 400, "bad_source", e.what());
        return;
      }
      send_json(res, 202, json{{"status", "started"}});
    });

    server.Get("/stream", [this](const httplib::Request&, httplib::Response& res) {
      auto sub = loop.subscribe();
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream",
          [sub](std::size_t, httplib::DataSink& sink) {
            const auto batch = sub->next_batch(256, 500ms, 20ms);
            if (batch.empty()) {
              if (sub->closed()) {
                sink.done();
                return false;
              }
              static constexpr char ping[] = ": ping\n\n";
              return sink.write(ping, sizeof(ping) - 1);
            }
            std::string frames;
            for (const auto& m : batch) frames += "event: " + m.type + "\ndata: " + m.data + "\n\n";
            return sink.write(frames.data(), frames.size());
          },
          [sub](bool) { sub->close(); });
    });

    server.Get(R"(/pdp/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string name = req.matches[1];
      const auto snap = loop.snapshot();
      for (const auto& p : snap->pdp) {
        if (p.feature == name) {
          send_json(res, 200, json(p));
          return;
        }
      }
      send_error(res, 404, "unknown_feature", "no feature named '" + name + "'");
    });

    server.Get("/threshold", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, json{{"value", loop.snapshot()->threshold}});
    });

    server.Put("/threshold", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req, res);
      if (!body) return;
      if (!body->contains("value") || !body->at("value").is_number()) {
        send_error(res, 400, "bad_threshold", "body must be {\"value\": number}");
        return;
      }
      const double value = body->at("value").get<double>();
      try {
        loop.call([value](Engine& e) { e.set_threshold(value); }).get();
      } catch (const std::exception& e) {
        send_error(res, 400, "bad_threshold", e.what());
        return;
      }
      res.status = 204;
    });

    server.Get("/threshold/suggestion", [this](const httplib::Request&, httplib::Response& res) {
      try {
        const auto s = loop.call([](Engine& e) { return e.suggest_threshold(); }).get();
        send_json(res, 200, json{{"threshold", s.threshold}, {"f1", s.f1}});
      } catch (const std::exception& e) {
        send_error(res, 409, "insufficient_labels", e.what());
      }
    });

    server.Get("/features", [this](const httplib::Request&, httplib::Response& res) {
      const auto snap = loop.snapshot();
      json out = json::array();
      for (std::size_t j = 0; j < snap->config.feature_names.size(); ++j) {
        out.push_back({{"name", snap->config.feature_names[j]}, {"enabled", bool(snap->enabled[j])}});
      }
      send_json(res, 200, out);
    });

    server.Put(R"(/features/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string name = req.matches[1];
      const auto body = parse_body(req, res);
      if (!body) return;
      if (!body->contains("enabled") || !body->at("enabled").is_boolean()) {
        send_error(res, 400, "bad_request", "body must be {\"enabled\": bool}");
        return;
      }
      const bool enabled = body->at("enabled").get<bool>();
      const auto& names = loop.config().feature_names;
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) {
        send_error(res, 404, "unknown_feature", "no feature named '" + name + "'");
        return;
      }
      const auto index = static_cast<std::size_t>(it - names.begin());
      try {
        loop.call([index, enabled](Engine& e) { e.set_feature_enabled(index, enabled); }).get();
      } catch (const StateError& e) {
        send_error(res, 409, "last_feature", e.what());
        return;
      }
      res.status = 204;
    });

    server.Get("/events", [this](const httplib::Request&, httplib::Response& res) {
      const auto snap = loop.snapshot();
      json events = json::array();
      for (const auto& e : snap->events) {
        json item = e;
        // Attach the operator verdict when a label covers the event.
        for (const auto& l : snap->labels) {
          if (l.from <= e.to && e.from <= l.to) item["label"] = l;
        }
        events.push_back(std::move(item));
      }
      send_json(res, 200, events);
    });

    server.Get("/labels", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, json(loop.snapshot()->labels));
    });

    server.Post("/labels", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req, res);
      if (!body) return;
      EventLabel label;
      try {
        body->get_to(label);
      } catch (const std::exception& e) {
        send_error(res, 400, "bad_label", e.what());
        return;
      }
      if (!body->contains("created_at")) label.created_at = wall_clock_ms();
      try {
        loop.call([label](Engine& e) { e.label_event(label); }).get();
      } catch (const std::exception& e) {
        send_error(res, 400, "bad_label", e.what());
        return;
      }
      send_json(res, 201, json(label));
    });

    server.Post("/runs/mark", [this](const httplib::Request& req, httplib::Response& res) {
      std::string note;
      if (!req.body.empty()) {
        const auto body = parse_body(req, res);
        if (!body) return;
        if (body->contains("note") && body->at("note").is_string()) note = body->at("note").get<std::string>();
      }
      const RunMark mark = loop.call([note](Engine& e) { return e.mark_run_boundary(note); }).get();
      send_json(res, 201, json(mark));
    });

    server.Get("/runs", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, json(loop.snapshot()->marks));
    });

    server.Get("/snapshot", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, json(*loop.snapshot()));
    });

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      } catch (...) {
        send_error(res, 500, "internal", "unknown error");
      }
    });

    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) send_error(res, res.status, "http_error", httplib::status_message(res.status));
    });
  }
};

Service::Service(EngineLoop& loop) : impl_(std::make_unique<Impl>(loop)) {}

Service::~Service() { stop(); }

bool Service::bind(const std::string& host, int port) { return impl_->server.bind_to_port(host, port); }

int Service::bind_any(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool Service::listen() { return impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

bool Service::running() const { return impl_->server.is_running(); }

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace oxad
