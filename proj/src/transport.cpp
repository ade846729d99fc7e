#include "grendel/transport.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>

#include "grendel/error.hpp"

namespace grendel {

InProcessTransport::InProcessTransport(int size)
    : size_(size), locks_(static_cast<std::size_t>(size)), pending_(size), ready_(size) {
  if (size < 1) throw Error("transport needs at least one rank");
}

void InProcessTransport::send(int source, int dest, Message message) {
  if (closed_) throw Error("transport closed; engine is shutting down");
  if (source < 0 || source >= size_ || dest < 0 || dest >= size_) {
    throw Error("transport: rank out of range");
  }
  std::lock_guard lock(locks_[dest]);
  pending_[dest].push_back({source, std::move(message)});
}

std::vector<Envelope> InProcessTransport::receive(int rank) {
  if (closed_) throw Error("transport closed; engine is shutting down");
  std::lock_guard lock(locks_[rank]);
  return std::exchange(ready_[rank], {});
}

void InProcessTransport::barrier() {
  for (int r = 0; r < size_; ++r) {
    std::lock_guard lock(locks_[r]);
    auto& in = pending_[r];
    std::stable_sort(in.begin(), in.end(), [](const Envelope& a, const Envelope& b) { return a.source < b.source; });
    // Undelivered messages from the previous generation are dropped; every
    // phase consumes what it was sent.
    ready_[r] = std::move(in);
    in.clear();
  }
  ++generation_;
}

void InProcessTransport::close() { closed_ = true; }

int thread_cap() {
  if (const char* env = std::getenv("GRENDEL_MINI_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw Error(std::string("GRENDEL_MINI_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void run_ranks(int ranks, int threads, const std::function<void(int)>& fn) {
  std::vector<std::exception_ptr> errors(ranks);
  auto guarded = [&](int r) {
    try {
      fn(r);
    } catch (...) {
      errors[r] = std::current_exception();
    }
  };
  threads = std::clamp(threads, 1, std::max(1, ranks));
  if (threads == 1) {
    for (int r = 0; r < ranks; ++r) guarded(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (int r = next++; r < ranks; r = next++) guarded(r);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace grendel
