#include <gtest/gtest.h>
#include <httplib.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <thread>

#include "oxad/engine_loop.hpp"
#include "oxad/json_io.hpp"
#include "oxad/service.hpp"
#include "support.hpp"

using namespace oxad;
using namespace std::chrono_literals;

namespace {

template <class Pred>
bool wait_for(Pred pred, std::chrono::milliseconds timeout = 20s) {
  const auto until = std::chrono::steady_clock::now() + timeout;
  while (!pred()) {
    if (std::chrono::steady_clock::now() > until) return false;
    std::this_thread::sleep_for(5ms);
  }
  return true;
}

SyntheticSpec calm_spec(std::size_t length, std::uint64_t seed = 3) {
  return benchmark_spec(seed, length, jacquard_schema(), 1, 0.0);
}

json synthetic_source(const SyntheticSpec& spec, double rate = 0.0) {
  return json{{"kind", "synthetic"}, {"synthetic", spec}, {"rate", rate}};
}

// Collects server-sent events from /stream on a background thread.
class SseReader {
 public:
  explicit SseReader(int port) {
    thread_ = std::thread([this, port] {
      httplib::Client c("127.0.0.1", port);
      c.set_read_timeout(60);
      std::string buf;
      c.Get("/stream", [&](const char* data, std::size_t n) {
        buf.append(data, n);
        std::size_t end;
        while ((end = buf.find("\n\n")) != std::string::npos) {
          parse(buf.substr(0, end));
          buf.erase(0, end + 2);
        }
        return !stop_;
      });
      finished_ = true;
    });
  }

  ~SseReader() { close(); }

  void close() {
    stop_ = true;
    if (thread_.joinable()) thread_.join();
  }

  std::vector<StreamMessage> messages() const {
    std::lock_guard lock(mu_);
    return messages_;
  }

  std::size_t count(const std::string& type) const {
    std::lock_guard lock(mu_);
    return std::count_if(messages_.begin(), messages_.end(), [&](const auto& m) { return m.type == type; });
  }

  bool finished() const { return finished_; }

 private:
  void parse(const std::string& frame) {
    if (frame.empty() || frame[0] == ':') return;
    StreamMessage m;
    std::size_t pos = 0;
    while (pos < frame.size()) {
      auto nl = frame.find('\n', pos);
      if (nl == std::string::npos) nl = frame.size();
      const std::string line = frame.substr(pos, nl - pos);
      if (line.rfind("event: ", 0) == 0) m.type = line.substr(7);
      if (line.rfind("data: ", 0) == 0) m.data = line.substr(6);
      pos = nl + 1;
    }
    std::lock_guard lock(mu_);
    messages_.push_back(std::move(m));
  }

  mutable std::mutex mu_;
  std::vector<StreamMessage> messages_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> finished_{false};
  std::thread thread_;
};

// A /stream client that sends its request and then never reads.
class StalledClient {
 public:
  explicit StalledClient(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    int small = 4096;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &small, sizeof(small));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    connected_ = ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0;
    const std::string req = "GET /stream HTTP/1.1\r\nHost: 127.0.0.1\r\n\r\n";
    if (connected_) connected_ = ::send(fd_, req.data(), req.size(), 0) == static_cast<ssize_t>(req.size());
  }
  ~StalledClient() { disconnect(); }

  void disconnect() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  bool connected() const { return connected_; }

 private:
  int fd_ = -1;
  bool connected_ = false;
};

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override { boot(default_engine_config(), {}); }

  void boot(EngineConfig config, EngineLoop::Options options) {
    loop_ = std::make_unique<EngineLoop>(std::move(config), std::move(options));
    service_ = std::make_unique<Service>(*loop_);
    port_ = service_->bind_any("127.0.0.1");
    ASSERT_GT(port_, 0);
    server_ = std::thread([this] { service_->listen(); });
    service_->wait_until_ready();
  }

  void TearDown() override {
    loop_->stop();
    service_->stop();
    if (server_.joinable()) server_.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(30);
    return c;
  }

  json get_json(const std::string& path, int expect = 200) {
    auto res = client().Get(path);
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << path << ": " << res->body;
    return json::parse(res->body);
  }

  httplib::Result put(const std::string& path, const json& body) {
    return client().Put(path, body.dump(), "application/json");
  }
  httplib::Result post(const std::string& path, const json& body) {
    return client().Post(path, body.dump(), "application/json");
  }

  void ingest_and_wait(const json& source) {
    auto res = post("/ingest/start", source);
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 202) << res->body;
    ASSERT_TRUE(loop_->wait_idle(60s));
  }

  static void expect_error_shape(const httplib::Result& res, int status) {
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, status);
    const json body = json::parse(res->body, nullptr, false);
    ASSERT_TRUE(body.is_object()) << res->body;
    EXPECT_EQ(body.at("status"), status);
    EXPECT_TRUE(body.at("code").is_string());
    EXPECT_TRUE(body.at("message").is_string());
    EXPECT_FALSE(body.at("message").get<std::string>().empty());
  }

  std::unique_ptr<EngineLoop> loop_;
  std::unique_ptr<Service> service_;
  std::thread server_;
  int port_ = -1;
};

}  // namespace

TEST_F(ServiceTest, HealthReportsVersion) {
  const json h = get_json("/health");
  EXPECT_EQ(h.at("status"), "ok");
  EXPECT_EQ(h.at("version"), std::string(version()));
  EXPECT_EQ(h.at("version"), std::string(OXAD_VERSION));

  ASSERT_EQ(post("/ingest/start", synthetic_source(calm_spec(400), 2000.0))->status, 202);
  EXPECT_EQ(get_json("/health").at("status"), "ok");
  EXPECT_TRUE(get_json("/status").at("running").get<bool>());
}

TEST_F(ServiceTest, IngestStartConflictsWhileRunning) {
  ASSERT_EQ(post("/ingest/start", synthetic_source(calm_spec(2000), 1000.0))->status, 202);
  expect_error_shape(post("/ingest/start", synthetic_source(calm_spec(10))), 409);
}

TEST_F(ServiceTest, IngestStartRejectsBadSpecs) {
  const auto dir = oracle::scratch_dir("service_bad_mapping");
  {
    std::ofstream out(dir / "data.csv");
    auto names = jacquard_schema();
    out << "timestamp";
    for (std::size_t j = 0; j + 1 < names.size(); ++j) out << ",\"" << names[j] << '"';
    out << "\n1000";
    for (std::size_t j = 0; j + 1 < names.size(); ++j) out << ",0.5";
    out << '\n';
  }
  const json csv{{"kind", "csv"}, {"path", (dir / "data.csv").string()}, {"feature_columns", jacquard_schema()}};
  auto res = post("/ingest/start", csv);
  expect_error_shape(res, 400);
  EXPECT_EQ(json::parse(res->body).at("column"), jacquard_schema().back());

  expect_error_shape(client().Post("/ingest/start", "{not json", "application/json"), 400);
  expect_error_shape(post("/ingest/start", json{{"kind", "parquet"}}), 400);
  expect_error_shape(post("/ingest/start", json{{"kind", "csv"}, {"path", "/nonexistent/x.csv"},
                                                 {"feature_columns", jacquard_schema()}}),
                     400);
  // The loop stays idle and accepts a good source afterwards.
  ingest_and_wait(synthetic_source(calm_spec(50)));
  EXPECT_EQ(loop_->snapshot()->processed, 50u);
}

TEST_F(ServiceTest, StreamDeliversOrderedIdenticalRecords) {
  SseReader a(port_), b(port_);
  ASSERT_TRUE(wait_for([&] { return loop_->subscribers() == 2; }));
  constexpr std::size_t n = 400;
  ingest_and_wait(synthetic_source(calm_spec(n)));
  ASSERT_TRUE(wait_for([&] { return a.count("record") == n && b.count("record") == n; }));
  a.close();
  b.close();

  const auto ma = a.messages();
  const auto mb = b.messages();
  ASSERT_EQ(ma.size(), mb.size());
  PointId prev = 0;
  ScoredRecord last;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    EXPECT_EQ(ma[i].type, mb[i].type);
    EXPECT_EQ(ma[i].data, mb[i].data);
    if (ma[i].type != "record") continue;
    last = json::parse(ma[i].data).get<ScoredRecord>();
    EXPECT_GT(last.instance_id, prev);
    prev = last.instance_id;
  }
  EXPECT_EQ(prev, n);

  // PDP snapshots carry the same fi as the last streamed record.
  const auto& names = jacquard_schema();
  for (std::size_t j = 0; j < names.size(); ++j) {
    const json p = get_json("/pdp/" + names[j]);
    EXPECT_EQ(p.at("feature"), names[j]);
    EXPECT_EQ(p.at("fi").get<double>(), last.fi[j]) << names[j];
  }
}

TEST_F(ServiceTest, PdpForEveryFeature) {
  ingest_and_wait(synthetic_source(calm_spec(120)));
  for (const auto& name : jacquard_schema()) {
    const json p = get_json("/pdp/" + name);
    const PdpSnapshot snap = p.get<PdpSnapshot>();
    EXPECT_EQ(snap.feature, name);
    EXPECT_EQ(snap.grid.size(), 20u);
    EXPECT_EQ(snap.pdp.size(), 20u);
    EXPECT_EQ(snap.ice.size(), 15u);
    for (const auto& ice : snap.ice) EXPECT_EQ(ice.values.size(), 20u);
  }
  // Percent-encoded form resolves as well.
  EXPECT_EQ(get_json("/pdp/Thermal%20Stress").at("feature"), "Thermal Stress");
  expect_error_shape(client().Get("/pdp/Spindle%20Speed"), 404);
}

TEST_F(ServiceTest, ThresholdRoundTrip) {
  EXPECT_EQ(get_json("/threshold").at("value"), default_engine_config().threshold);
  auto res = put("/threshold", json{{"value", 0.8}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_EQ(get_json("/threshold").at("value"), 0.8);

  expect_error_shape(put("/threshold", json{{"value", 1.5}}), 400);
  expect_error_shape(put("/threshold", json{{"value", 0.0}}), 400);
  expect_error_shape(put("/threshold", json{{"value", "high"}}), 400);
  expect_error_shape(put("/threshold", json{{"theta", 0.5}}), 400);
  EXPECT_EQ(get_json("/threshold").at("value"), 0.8);

  SseReader reader(port_);
  ASSERT_TRUE(wait_for([&] { return loop_->subscribers() == 1; }));
  ingest_and_wait(synthetic_source(calm_spec(100)));
  ASSERT_TRUE(wait_for([&] { return reader.count("record") == 100; }));
  reader.close();
  for (const auto& m : reader.messages()) {
    if (m.type == "record") EXPECT_EQ(json::parse(m.data).at("threshold_used"), 0.8);
  }
}

TEST_F(ServiceTest, FeatureToggles) {
  const json list = get_json("/features");
  ASSERT_EQ(list.size(), 9u);
  for (std::size_t j = 0; j < 9; ++j) {
    EXPECT_EQ(list[j].at("name"), jacquard_schema()[j]);
    EXPECT_TRUE(list[j].at("enabled").get<bool>());
  }
  auto res = put("/features/Voltage Quality", json{{"enabled", false}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_FALSE(get_json("/features")[5].at("enabled").get<bool>());
  EXPECT_EQ(put("/features/Voltage Quality", json{{"enabled", true}})->status, 204);
  EXPECT_TRUE(get_json("/features")[5].at("enabled").get<bool>());

  expect_error_shape(put("/features/Spindle Speed", json{{"enabled", false}}), 404);
  expect_error_shape(put("/features/Voltage Quality", json{{"enabled", "no"}}), 400);

  const auto& names = jacquard_schema();
  for (std::size_t j = 0; j + 1 < names.size(); ++j) {
    EXPECT_EQ(put("/features/" + names[j], json{{"enabled", false}})->status, 204);
  }
  expect_error_shape(put("/features/" + names.back(), json{{"enabled", false}}), 409);
  EXPECT_TRUE(get_json("/features")[8].at("enabled").get<bool>());
}

TEST_F(ServiceTest, LabelsAndSuggestion) {
  expect_error_shape(client().Get("/threshold/suggestion"), 409);

  SyntheticSpec spec = calm_spec(500, 11);
  spec.anomalies.push_back(AnomalySpec{300, 20, {0, 3, 6}, 8.0, AnomalyKind::spike});
  SseReader reader(port_);
  ASSERT_TRUE(wait_for([&] { return loop_->subscribers() == 1; }));
  ingest_and_wait(synthetic_source(spec));
  ASSERT_TRUE(wait_for([&] { return reader.count("record") == 500; }));
  reader.close();

  expect_error_shape(post("/labels", json{{"event_id", 1}, {"from", 300}, {"to", 319}, {"verdict", "broken"}}), 400);
  expect_error_shape(post("/labels", json{{"event_id", 1}, {"from", 320}, {"to", 300}, {"verdict", "normal"}}), 400);
  expect_error_shape(post("/labels", json{{"event_id", 1}, {"from", 490}, {"to", 900}, {"verdict", "normal"}}), 400);

  auto res = post("/labels", json{{"event_id", 7}, {"from", 200}, {"to", 299}, {"verdict", "normal"}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201) << res->body;
  expect_error_shape(client().Get("/threshold/suggestion"), 409);

  res = post("/labels", json{{"event_id", 8}, {"from", 300}, {"to", 319}, {"verdict", "confirmed_fault"},
                             {"note", "broken heald"}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  const EventLabel created = json::parse(res->body).get<EventLabel>();
  EXPECT_EQ(created.verdict, Verdict::confirmed_fault);
  EXPECT_GT(created.created_at, 0);

  const json labels = get_json("/labels");
  ASSERT_EQ(labels.size(), 2u);
  EXPECT_EQ(labels[1].at("note"), "broken heald");

  std::vector<std::pair<double, bool>> labeled;
  for (const auto& m : reader.messages()) {
    if (m.type != "record") continue;
    const auto r = json::parse(m.data).get<ScoredRecord>();
    if (r.instance_id >= 200 && r.instance_id <= 319) labeled.emplace_back(r.score, r.instance_id >= 300);
  }
  ASSERT_EQ(labeled.size(), 120u);
  const json s = get_json("/threshold/suggestion");
  EXPECT_NEAR(s.at("threshold").get<double>(), oracle::sweep_oracle(labeled), 1e-12);
  EXPECT_GT(s.at("f1").get<double>(), 0.0);

  // Events covered by a label carry it.
  for (const auto& e : get_json("/events")) {
    const auto from = e.at("from").get<PointId>();
    const auto to = e.at("to").get<PointId>();
    if (from <= 319 && 300 <= to) EXPECT_EQ(e.at("label").at("verdict"), "confirmed_fault");
  }
}

TEST_F(ServiceTest, RunMarksAreStreamedInOrder) {
  SseReader reader(port_);
  ASSERT_TRUE(wait_for([&] { return loop_->subscribers() == 1; }));
  ingest_and_wait(synthetic_source(calm_spec(30)));
  auto res = post("/runs/mark", json{{"note", "warp change"}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  EXPECT_EQ(json::parse(res->body).at("instance_id"), 30);
  res = client().Post("/runs/mark", "", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  EXPECT_EQ(json::parse(res->body).at("note"), "");

  const json runs = get_json("/runs");
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_EQ(runs[0].at("note"), "warp change");
  EXPECT_EQ(runs[1].at("note"), "");

  ASSERT_TRUE(wait_for([&] { return reader.count("mark") == 2; }));
  reader.close();
  std::vector<std::string> notes;
  for (const auto& m : reader.messages()) {
    if (m.type == "mark") notes.push_back(json::parse(m.data).at("note"));
  }
  EXPECT_EQ(notes, (std::vector<std::string>{"warp change", ""}));
}

TEST_F(ServiceTest, SnapshotMatchesLoopState) {
  ingest_and_wait(synthetic_source(calm_spec(80)));
  const json j = get_json("/snapshot");
  const EngineSnapshot snap = j.get<EngineSnapshot>();
  EXPECT_EQ(snap, *loop_->snapshot());
  EXPECT_EQ(snap.processed, 80u);
  EXPECT_EQ(j, json(snap));
  const json status = get_json("/status");
  EXPECT_EQ(status.at("processed"), 80);
  EXPECT_FALSE(status.at("running").get<bool>());
}

TEST_F(ServiceTest, UnknownRouteUsesErrorShape) {
  expect_error_shape(client().Get("/nope"), 404);
}

TEST_F(ServiceTest, PortConflictFailsToBind) {
  EngineLoop other(default_engine_config(), {});
  Service second(other);
  EXPECT_FALSE(second.bind("127.0.0.1", port_));
}

TEST(SubscriberTest, OverflowDropsAndClears) {
  Subscriber sub(4);
  for (int i = 0; i < 4; ++i) EXPECT_TRUE(sub.offer({"record", std::to_string(i)}));
  EXPECT_FALSE(sub.dropped());
  EXPECT_FALSE(sub.offer({"record", "4"}));
  EXPECT_TRUE(sub.dropped());
  EXPECT_TRUE(sub.closed());
  EXPECT_FALSE(sub.next(0ms));
  EXPECT_FALSE(sub.offer({"record", "5"}));
}

TEST(SubscriberTest, BatchesKeepOrder) {
  Subscriber sub(100);
  for (int i = 0; i < 10; ++i) sub.offer({"record", std::to_string(i)});
  auto first = sub.next_batch(4, 0ms, 0ms);
  ASSERT_EQ(first.size(), 4u);
  EXPECT_EQ(first[0].data, "0");
  EXPECT_EQ(first[3].data, "3");
  auto rest = sub.next_batch(100, 0ms, 1ms);
  ASSERT_EQ(rest.size(), 6u);
  EXPECT_EQ(rest.back().data, "9");
  EXPECT_TRUE(sub.next_batch(10, 1ms, 1ms).empty());
}

TEST(SubscriberTest, IdleSubscriberIsDroppedAndEngineFinishes) {
  EngineLoop loop(default_engine_config(), {.output_dir = std::nullopt, .subscriber_buffer = 16});
  auto idle = loop.subscribe();
  ASSERT_TRUE(loop.start(std::make_unique<VectorSource>(gen_synthetic(calm_spec(300)).instances)));
  ASSERT_TRUE(loop.wait_idle(60s));
  EXPECT_TRUE(idle->dropped());
  EXPECT_EQ(loop.subscribers(), 0u);
  EXPECT_EQ(loop.status().processed, 300u);
}

// Engine throughput with a stalled or vanished /stream client stays within
// 5% of the throughput with no client at all.
TEST(StreamLoadTest, StalledAndDisconnectedClientsDoNotSlowTheEngine) {
  const auto data = gen_synthetic(benchmark_spec(5, 3000));
  const auto run = [&](int mode) {
    EngineLoop loop(default_engine_config(), {});
    Service service(loop);
    const int port = service.bind_any("127.0.0.1");
    std::thread server([&] { service.listen(); });
    service.wait_until_ready();
    std::optional<StalledClient> stalled;
    if (mode > 0) {
      stalled.emplace(port);
      EXPECT_TRUE(stalled->connected());
      EXPECT_TRUE(wait_for([&] { return loop.subscribers() == 1; }));
      if (mode == 2) stalled->disconnect();
    }
    const auto t0 = std::chrono::steady_clock::now();
    EXPECT_TRUE(loop.start(std::make_unique<VectorSource>(data.instances)));
    EXPECT_TRUE(loop.wait_idle(120s));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_EQ(loop.status().processed, data.instances.size());
    loop.stop();
    service.stop();
    server.join();
    return static_cast<double>(data.instances.size()) / secs;
  };
  double base = 0, stalled = 0, gone = 0;
  for (int k = 0; k < 3; ++k) {
    base = std::max(base, run(0));
    stalled = std::max(stalled, run(1));
    gone = std::max(gone, run(2));
  }
  std::printf("throughput inst/s: no client %.0f, stalled %.0f, disconnected %.0f\n", base, stalled, gone);
  EXPECT_GE(stalled, 0.95 * base);
  EXPECT_GE(gone, 0.95 * base);
}
