#include "oxad/engine_loop.hpp"

#include <iostream>

#include "oxad/json_io.hpp"

namespace oxad {

using namespace std::chrono_literals;

// ---------------------------------------------------------------------------
// Sinks

FileSink::FileSink(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  session_.open(dir / "session.jsonl", std::ios::binary | std::ios::trunc);
  labels_.open(dir / "labels.jsonl", std::ios::binary | std::ios::trunc);
  marks_.open(dir / "marks.jsonl", std::ios::binary | std::ios::trunc);
  if (!session_ || !labels_ || !marks_) throw InputError("cannot open output files in '" + dir.string() + "'");
}

void FileSink::on_record(const ScoredRecord& r) { session_ << record_line(r) << '\n'; }

void FileSink::on_mark(const RunMark& m) {
  marks_ << json(m).dump() << '\n';
  marks_.flush();
}

void FileSink::on_label(const EventLabel& l) {
  labels_ << json(l).dump() << '\n';
  labels_.flush();
}

void FileSink::flush() {
  session_.flush();
  labels_.flush();
  marks_.flush();
}

namespace {

template <class T>
std::vector<T> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::vector<T> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line).get<T>());
  }
  return out;
}

}  // namespace

std::vector<EventLabel> read_labels(const std::filesystem::path& path) { return read_lines<EventLabel>(path); }
std::vector<RunMark> read_marks(const std::filesystem::path& path) { return read_lines<RunMark>(path); }

void MultiSink::on_record(const ScoredRecord& r) {
  for (auto* s : sinks_) s->on_record(r);
}
void MultiSink::on_event(const Event& e) {
  for (auto* s : sinks_) s->on_event(e);
}
void MultiSink::on_mark(const RunMark& m) {
  for (auto* s : sinks_) s->on_mark(m);
}
void MultiSink::on_label(const EventLabel& l) {
  for (auto* s : sinks_) s->on_label(l);
}

// ---------------------------------------------------------------------------
// Push stream

std::vector<StreamMessage> Subscriber::next_batch(std::size_t max, std::chrono::milliseconds timeout,
                                                  std::chrono::milliseconds linger) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
  if (!queue_.empty() && queue_.size() < max && !closed_) {
    wake_at_ = max;
    cv_.wait_for(lock, linger, [&] { return queue_.size() >= max || closed_; });
    wake_at_ = 1;
  }
  std::vector<StreamMessage> out;
  const std::size_t n = std::min(max, queue_.size());
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(std::move(queue_.front()));
    queue_.pop_front();
  }
  return out;
}

std::optional<StreamMessage> Subscriber::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
  if (queue_.empty()) return std::nullopt;
  StreamMessage m = std::move(queue_.front());
  queue_.pop_front();
  return m;
}

bool Subscriber::offer(const StreamMessage& m) {
  bool wake = true;
  bool ok = true;
  {
    std::lock_guard lock(mu_);
    if (closed_) return false;
    if (queue_.size() >= capacity_) {
      dropped_ = true;
      closed_ = true;
      queue_.clear();
      ok = false;
    } else {
      queue_.push_back(m);
      // Only the transitions a waiting reader cares about.
      wake = queue_.size() == 1 || queue_.size() == wake_at_;
    }
  }
  if (wake) cv_.notify_all();
  return ok;
}

void Subscriber::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool Subscriber::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

bool Subscriber::dropped() const {
  std::lock_guard lock(mu_);
  return dropped_;
}

Broadcaster::~Broadcaster() { close_all(); }

std::shared_ptr<Subscriber> Broadcaster::subscribe() {
  auto s = std::make_shared<Subscriber>(capacity_);
  std::lock_guard lock(mu_);
  subs_.push_back(s);
  return s;
}

std::size_t Broadcaster::subscribers() const {
  std::lock_guard lock(mu_);
  return subs_.size();
}

void Broadcaster::close_all() {
  std::lock_guard lock(mu_);
  for (auto& s : subs_) s->close();
  subs_.clear();
}

void Broadcaster::publish(const char* type, const std::function<std::string()>& render) {
  std::lock_guard lock(mu_);
  if (subs_.empty()) return;
  const StreamMessage m{type, render()};
  std::erase_if(subs_, [&](const std::shared_ptr<Subscriber>& s) { return !s->offer(m); });
}

void Broadcaster::on_record(const ScoredRecord& r) {
  publish("record", [&] { return record_line(r); });
}
void Broadcaster::on_event(const Event& e) {
  publish("event", [&] { return json(e).dump(); });
}
void Broadcaster::on_mark(const RunMark& m) {
  publish("mark", [&] { return json(m).dump(); });
}

// ---------------------------------------------------------------------------
// Loop

EngineLoop::EngineLoop(EngineConfig config, Options options)
    : config_(std::move(config)),
      options_(std::move(options)),
      engine_(config_),
      broadcaster_(options_.subscriber_buffer) {
  if (options_.output_dir) {
    file_sink_ = std::make_unique<FileSink>(*options_.output_dir);
    sinks_.add(file_sink_.get());
  }
  sinks_.add(&broadcaster_);
  engine_.set_sink(&sinks_);
  snapshot_ = std::make_shared<const EngineSnapshot>(engine_.snapshot());
  worker_ = std::thread([this] { run(); });
}

EngineLoop::~EngineLoop() { stop(); }

bool EngineLoop::start(const SourceSpec& spec) {
  {
    std::lock_guard lock(mu_);
    if (producing_ || !instances_.empty()) return false;
  }
  if (spec.kind != SourceKind::synthetic && spec.feature_columns.size() != config_.dim()) {
    throw IngestError("column mapping has " + std::to_string(spec.feature_columns.size()) +
                      " feature columns, engine expects " + std::to_string(config_.dim()));
  }
  if (spec.kind == SourceKind::synthetic && spec.synthetic && spec.synthetic->dim() != config_.dim()) {
    throw IngestError("synthetic spec dimension does not match the engine");
  }
  return start(open_source(spec), spec.rate);
}

bool EngineLoop::start(std::unique_ptr<InstanceSource> source, double rate) {
  std::unique_lock lock(mu_);
  if (producing_ || !instances_.empty() || stopping_) return false;
  producing_ = true;
  status_.running = true;
  status_.last_error.clear();
  const auto generation = ++generation_;
  lock.unlock();
  if (producer_.joinable()) producer_.join();
  producer_ = std::thread([this, s = std::move(source), rate, generation]() mutable {
    produce(std::move(s), rate, generation);
  });
  return true;
}

void EngineLoop::produce(std::unique_ptr<InstanceSource> source, double rate, std::uint64_t generation) {
  const auto period = rate > 0.0 ? std::chrono::duration<double>(1.0 / rate) : std::chrono::duration<double>(0);
  auto due = std::chrono::steady_clock::now();
  std::string error;
  try {
    for (;;) {
      auto inst = source->next();
      if (!inst) break;
      if (rate > 0.0) {
        due += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
        std::this_thread::sleep_until(due);
      }
      std::unique_lock lock(mu_);
      space_cv_.wait(lock, [&] { return instances_.size() < options_.queue_capacity || stopping_; });
      if (stopping_ || generation != generation_) return;
      instances_.push_back(std::move(*inst));
      lock.unlock();
      loop_cv_.notify_all();
    }
  } catch (const std::exception& e) {
    error = e.what();
  }
  {
    std::lock_guard lock(mu_);
    producing_ = false;
    if (!error.empty()) status_.last_error = error;
  }
  loop_cv_.notify_all();
}

void EngineLoop::post(Command command) {
  {
    std::lock_guard lock(mu_);
    if (stopping_) throw StateError("engine loop is stopped");
    commands_.push_back(std::move(command));
  }
  loop_cv_.notify_all();
}

void EngineLoop::publish() {
  auto snap = std::make_shared<const EngineSnapshot>(engine_.snapshot());
  std::lock_guard lock(snap_mu_);
  snapshot_ = std::move(snap);
  last_publish_ = std::chrono::steady_clock::now();
}

void EngineLoop::run() {
  for (;;) {
    Command command;
    std::optional<Instance> instance;
    {
      std::unique_lock lock(mu_);
      busy_ = false;
      idle_cv_.notify_all();
      loop_cv_.wait(lock, [&] { return stopping_ || !commands_.empty() || !instances_.empty(); });
      if (stopping_) break;
      busy_ = true;
      // Commands go first so control changes land before the next instance.
      if (!commands_.empty()) {
        command = std::move(commands_.front());
        commands_.pop_front();
      } else {
        instance = std::move(instances_.front());
        instances_.pop_front();
        space_cv_.notify_all();
      }
    }
    if (command) {
      auto ack = command(engine_);
      publish();
      ack();
      continue;
    }
    bool rejected = false;
    std::string error;
    try {
      engine_.process(*instance);
    } catch (const std::exception& e) {
      rejected = true;
      error = e.what();
      std::cerr << "rejected instance " << instance->id << ": " << error << '\n';
    }
    bool drained;
    {
      std::lock_guard lock(mu_);
      if (rejected) {
        ++status_.rejected;
        status_.last_error = error;
      }
      status_.processed = engine_.processed();
      drained = instances_.empty();
      if (drained && !producing_) status_.running = false;
    }
    if (drained || std::chrono::steady_clock::now() - last_publish_ > 50ms) publish();
  }
  if (file_sink_) file_sink_->flush();
}

std::shared_ptr<const EngineSnapshot> EngineLoop::snapshot() const {
  std::lock_guard lock(snap_mu_);
  return snapshot_;
}

LoopStatus EngineLoop::status() const {
  std::lock_guard lock(mu_);
  LoopStatus s = status_;
  s.running = producing_ || !instances_.empty() || busy_;
  return s;
}

bool EngineLoop::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  return idle_cv_.wait_for(lock, timeout, [&] {
    return !producing_ && instances_.empty() && commands_.empty() && !busy_;
  });
}

void EngineLoop::stop() {
  {
    std::lock_guard lock(mu_);
    if (stopping_ && !worker_.joinable()) return;
    stopping_ = true;
  }
  loop_cv_.notify_all();
  space_cv_.notify_all();
  if (producer_.joinable()) producer_.join();
  if (worker_.joinable()) worker_.join();
  // Commands still queued never ran; fail their futures instead of leaving
  // callers waiting.
  std::deque<Command> orphaned;
  {
    std::lock_guard lock(mu_);
    orphaned.swap(commands_);
  }
  broadcaster_.close_all();
  if (file_sink_) file_sink_->flush();
}

}  // namespace oxad
