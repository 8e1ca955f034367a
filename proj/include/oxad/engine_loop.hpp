#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "oxad/engine.hpp"
#include "oxad/ingest.hpp"

namespace oxad {

// Writes records, labels and marks to fresh line-delimited JSON files in a
// directory (session.jsonl, labels.jsonl, marks.jsonl).
class FileSink : public EngineSink {
 public:
  explicit FileSink(const std::filesystem::path& dir);
  void on_record(const ScoredRecord& r) override;
  void on_mark(const RunMark& m) override;
  void on_label(const EventLabel& l) override;
  void flush();

 private:
  std::ofstream session_;
  std::ofstream labels_;
  std::ofstream marks_;
};

// Replays a labels.jsonl file written by FileSink.
std::vector<EventLabel> read_labels(const std::filesystem::path& path);
std::vector<RunMark> read_marks(const std::filesystem::path& path);

// Forwards every callback to several sinks.
class MultiSink : public EngineSink {
 public:
  void add(EngineSink* sink) { sinks_.push_back(sink); }
  void on_record(const ScoredRecord& r) override;
  void on_event(const Event& e) override;
  void on_mark(const RunMark& m) override;
  void on_label(const EventLabel& l) override;

 private:
  std::vector<EngineSink*> sinks_;
};

struct StreamMessage {
  // "record", "event" or "mark".
  std::string type;
  std::string data;
};

// One push-stream reader with a bounded backlog. A reader that lets the
// backlog overflow is dropped; the engine never waits on it.
class Subscriber {
 public:
  explicit Subscriber(std::size_t capacity) : capacity_(capacity) {}

  // Waits up to `timeout` for the next message. Returns nullopt on timeout
  // or once the subscriber is closed and drained.
  std::optional<StreamMessage> next(std::chrono::milliseconds timeout);
  // Waits up to `timeout` for a first message, then up to `linger` more
  // for the backlog to reach `max`. Returns whatever is queued, up to `max`.
  std::vector<StreamMessage> next_batch(std::size_t max, std::chrono::milliseconds timeout,
                                        std::chrono::milliseconds linger);

  bool offer(const StreamMessage& m);
  void close();
  bool closed() const;
  bool dropped() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<StreamMessage> queue_;
  std::size_t capacity_;
  // Backlog size at which a lingering batch reader is woken.
  std::size_t wake_at_ = 1;
  bool closed_ = false;
  bool dropped_ = false;
};

class Broadcaster : public EngineSink {
 public:
  explicit Broadcaster(std::size_t capacity) : capacity_(capacity) {}
  ~Broadcaster() override;

  std::shared_ptr<Subscriber> subscribe();
  std::size_t subscribers() const;
  void close_all();

  void on_record(const ScoredRecord& r) override;
  void on_event(const Event& e) override;
  void on_mark(const RunMark& m) override;

 private:
  void publish(const char* type, const std::function<std::string()>& render);

  std::size_t capacity_;
  mutable std::mutex mu_;
  std::vector<std::shared_ptr<Subscriber>> subs_;
};

struct LoopStatus {
  bool running = false;
  std::uint64_t processed = 0;
  std::uint64_t rejected = 0;
  std::string last_error;
};

// Owns an Engine on a dedicated thread. Instances arrive from a source
// through a bounded queue (the producer blocks when it is full); control
// commands are queued and applied between instances. Readers get immutable
// snapshots and never block the loop.
class EngineLoop {
 public:
  struct Options {
    std::optional<std::filesystem::path> output_dir;
    std::size_t subscriber_buffer = 1024;
    std::size_t queue_capacity = 4096;
  };

  EngineLoop(EngineConfig config, Options options);
  ~EngineLoop();

  EngineLoop(const EngineLoop&) = delete;
  EngineLoop& operator=(const EngineLoop&) = delete;

  // Opens the source (throwing on a bad spec) and starts consuming it.
  // Returns false when a source is already active.
  bool start(const SourceSpec& spec);
  bool start(std::unique_ptr<InstanceSource> source, double rate = 0.0);

  // Runs `fn` on the engine thread between instances. The future resolves
  // after the command ran and a fresh snapshot was published.
  template <class Fn>
  auto call(Fn fn) -> std::future<decltype(fn(std::declval<Engine&>()))> {
    using R = decltype(fn(std::declval<Engine&>()));
    auto promise = std::make_shared<std::promise<R>>();
    auto future = promise->get_future();
    post([promise, fn = std::move(fn)](Engine& e) mutable -> std::function<void()> {
      try {
        if constexpr (std::is_void_v<R>) {
          fn(e);
          return [promise] { promise->set_value(); };
        } else {
          auto value = std::make_shared<R>(fn(e));
          return [promise, value] { promise->set_value(std::move(*value)); };
        }
      } catch (...) {
        return [promise, error = std::current_exception()] { promise->set_exception(error); };
      }
    });
    return future;
  }

  std::shared_ptr<const EngineSnapshot> snapshot() const;
  LoopStatus status() const;
  const EngineConfig& config() const { return config_; }

  std::shared_ptr<Subscriber> subscribe() { return broadcaster_.subscribe(); }
  std::size_t subscribers() const { return broadcaster_.subscribers(); }

  // Blocks until the active source is exhausted and every queued instance
  // and command has been applied, or the timeout expires.
  bool wait_idle(std::chrono::milliseconds timeout);

  void stop();

 private:
  // A command mutates the engine and returns its acknowledgement, which
  // runs once the resulting snapshot is visible.
  using Command = std::function<std::function<void()>(Engine&)>;

  void post(Command command);
  void run();
  void produce(std::unique_ptr<InstanceSource> source, double rate, std::uint64_t generation);
  void publish();

  EngineConfig config_;
  Options options_;
  Engine engine_;
  Broadcaster broadcaster_;
  std::unique_ptr<FileSink> file_sink_;
  MultiSink sinks_;

  mutable std::mutex mu_;
  std::condition_variable loop_cv_;
  std::condition_variable space_cv_;
  std::condition_variable idle_cv_;
  std::deque<Instance> instances_;
  std::deque<Command> commands_;
  bool producing_ = false;
  bool busy_ = false;
  bool stopping_ = false;
  std::uint64_t generation_ = 0;
  LoopStatus status_;

  mutable std::mutex snap_mu_;
  std::shared_ptr<const EngineSnapshot> snapshot_;
  std::chrono::steady_clock::time_point last_publish_{};

  std::thread producer_;
  std::thread worker_;
};

}  // namespace oxad
