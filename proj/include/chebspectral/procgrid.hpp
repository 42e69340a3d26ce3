#ifndef CHEBSPECTRAL_PROCGRID_HPP
#define CHEBSPECTRAL_PROCGRID_HPP

// In-process simulation of p message-passing ranks: a transport of ordered
// per-pair channels, collectives with a fixed reduction order, an alpha-beta
// cost model charged per rank, and the sqrt(p) x sqrt(p) grid topology.

#include "dense.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace chebspectral {

using Payload = std::vector<double>;

class CommError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DeadlockError : public CommError {
 public:
  using CommError::CommError;
};

inline int ceil_log2(Index n) {
  int r = 0;
  while ((Index{1} << r) < n) ++r;
  return r;
}

// ---------------------------------------------------------------------------
// Cost accounting

struct CollectiveCost {
  std::uint64_t count = 0;
  std::uint64_t messages = 0;
  std::uint64_t words = 0;

  CollectiveCost& operator+=(const CollectiveCost& o) {
    count += o.count;
    messages += o.messages;
    words += o.words;
    return *this;
  }
  friend bool operator==(const CollectiveCost&, const CollectiveCost&) = default;
};

/// Charged costs of one rank. Keys of the breakdown are (phase, collective).
struct CostCounters {
  std::uint64_t messages = 0;
  std::uint64_t words = 0;
  std::uint64_t flops = 0;
  std::map<std::pair<std::string, std::string>, CollectiveCost> by_collective;
  std::map<std::string, std::uint64_t> flops_by_phase;

  void charge(const std::string& phase, const std::string& collective, std::uint64_t msgs,
              std::uint64_t wds) {
    messages += msgs;
    words += wds;
    auto& c = by_collective[{phase, collective}];
    ++c.count;
    c.messages += msgs;
    c.words += wds;
  }

  void add_flops(const std::string& phase, std::uint64_t f) {
    flops += f;
    flops_by_phase[phase] += f;
  }

  void reset() { *this = CostCounters{}; }

  /// Totals of one phase over all collectives.
  CollectiveCost phase_total(const std::string& phase) const {
    CollectiveCost t;
    for (const auto& [key, c] : by_collective)
      if (key.first == phase) t += c;
    return t;
  }

  /// Totals of one collective kind over all phases.
  CollectiveCost collective_total(const std::string& collective) const {
    CollectiveCost t;
    for (const auto& [key, c] : by_collective)
      if (key.second == collective) t += c;
    return t;
  }

  /// CSV dump: collective,count,messages,words (one row per collective kind).
  void write_csv(std::ostream& out) const {
    std::map<std::string, CollectiveCost> agg;
    for (const auto& [key, c] : by_collective) agg[key.second] += c;
    out << "collective,count,messages,words\n";
    for (const auto& [name, c] : agg)
      out << name << ',' << c.count << ',' << c.messages << ',' << c.words << '\n';
  }
};

/// Elementwise maximum over ranks of every counter.
inline CostCounters max_over_ranks(const std::vector<CostCounters>& per_rank) {
  CostCounters m;
  for (const auto& c : per_rank) {
    m.messages = std::max(m.messages, c.messages);
    m.words = std::max(m.words, c.words);
    m.flops = std::max(m.flops, c.flops);
    for (const auto& [key, v] : c.by_collective) {
      auto& t = m.by_collective[key];
      t.count = std::max(t.count, v.count);
      t.messages = std::max(t.messages, v.messages);
      t.words = std::max(t.words, v.words);
    }
    for (const auto& [key, v] : c.flops_by_phase)
      m.flops_by_phase[key] = std::max(m.flops_by_phase[key], v);
  }
  return m;
}

/// Closed-form charges per rank for a communicator of n ranks and w local
/// words (the per-rank contribution).
namespace cost_model {

struct Charge {
  std::uint64_t messages;
  std::uint64_t words;
};

inline Charge allgather(Index n, Index w) {
  const auto l = static_cast<std::uint64_t>(ceil_log2(n));
  return {l, n > 1 ? static_cast<std::uint64_t>(w * n) : 0};
}
inline Charge reduce_scatter(Index n, Index w) {
  const auto l = static_cast<std::uint64_t>(ceil_log2(n));
  return {l, n > 1 ? static_cast<std::uint64_t>(w) : 0};
}
inline Charge allreduce(Index n, Index w) {
  const auto l = static_cast<std::uint64_t>(ceil_log2(n));
  return {2 * l, 2 * l * static_cast<std::uint64_t>(w)};
}
inline Charge tree(Index n, Index w) {  // bcast / reduce
  const auto l = static_cast<std::uint64_t>(ceil_log2(n));
  return {l, l * static_cast<std::uint64_t>(w)};
}

}  // namespace cost_model

// ---------------------------------------------------------------------------
// Transport

/// Shared channel fabric for p ranks. Channels are FIFO per (src, dst) pair
/// and bounded; send blocks while the channel is full.
///
/// Two schedulers: `threaded` runs every rank on its own thread; `lockstep`
/// also uses one thread per rank but lets exactly one of them run at a time,
/// handing a baton round-robin whenever the holder blocks or finishes, so
/// the interleaving is reproducible. Both detect global deadlock.
class Fabric {
 public:
  enum class Mode { threaded, lockstep };

  Fabric(int p, Mode mode, std::size_t capacity)
      : p_(p), mode_(mode), capacity_(std::max<std::size_t>(capacity, 1)),
        chan_(static_cast<std::size_t>(p) * static_cast<std::size_t>(p)),
        waiting_(static_cast<std::size_t>(p)), done_(static_cast<std::size_t>(p), false) {}

  int size() const { return p_; }

  void send(int src, int dst, int tag, Payload data) {
    check_rank(dst);
    std::unique_lock lk(mu_);
    auto& ch = channel(src, dst);
    wait_for(lk, src, [&] { return ch.size() < capacity_; });
    ch.push_back({tag, std::move(data)});
    progress();
  }

  Payload recv(int dst, int src, int tag) {
    check_rank(src);
    std::unique_lock lk(mu_);
    auto& ch = channel(src, dst);
    wait_for(lk, dst, [&] { return !ch.empty(); });
    Message msg = std::move(ch.front());
    ch.pop_front();
    progress();
    if (msg.tag != tag) {
      std::ostringstream os;
      os << "collective mismatch: rank " << dst << " expected tag " << tag << " from rank "
         << src << ", got " << msg.tag;
      throw CommError(os.str());
    }
    return std::move(msg.data);
  }

  /// Blocks a lockstep rank until it holds the baton.
  void enter(int rank) {
    std::unique_lock lk(mu_);
    wait_for(lk, rank, [] { return true; });
  }

  void finish(int rank) {
    std::lock_guard lk(mu_);
    done_[static_cast<std::size_t>(rank)] = true;
    if (mode_ == Mode::lockstep && baton_ == rank) pass_baton();
    idle_passes_ = 0;
    cv_.notify_all();
  }

  void abort(std::exception_ptr e) {
    std::lock_guard lk(mu_);
    if (!error_) error_ = std::move(e);
    aborted_ = true;
    cv_.notify_all();
  }

  std::exception_ptr error() const { return error_; }

  /// Thrown inside ranks that are unwound because another rank failed.
  struct Aborted {};

 private:
  struct Message {
    int tag;
    Payload data;
  };

  std::deque<Message>& channel(int src, int dst) {
    return chan_[static_cast<std::size_t>(src) * static_cast<std::size_t>(p_) +
                 static_cast<std::size_t>(dst)];
  }

  void check_rank(int r) const {
    if (r < 0 || r >= p_) throw CommError("rank out of range: " + std::to_string(r));
  }

  void progress() {
    idle_passes_ = 0;
    cv_.notify_all();
  }

  void pass_baton() {
    for (int k = 1; k <= p_; ++k) {
      const int next = (baton_ + k) % p_;
      if (!done_[static_cast<std::size_t>(next)]) {
        baton_ = next;
        return;
      }
    }
  }

  [[noreturn]] void deadlock(int rank) {
    aborted_ = true;
    if (!error_)
      error_ = std::make_exception_ptr(
          DeadlockError("deadlock: every live rank is blocked (detected by rank " +
                        std::to_string(rank) + ")"));
    cv_.notify_all();
    throw Aborted{};
  }

  template <class Ready>
  void wait_for(std::unique_lock<std::mutex>& lk, int rank, Ready&& ready) {
    auto& slot = waiting_[static_cast<std::size_t>(rank)];
    for (;;) {
      if (aborted_) {
        slot = nullptr;
        throw Aborted{};
      }
      const bool turn = mode_ == Mode::threaded || baton_ == rank;
      if (turn && ready()) {
        slot = nullptr;
        return;
      }
      if (mode_ == Mode::lockstep) {
        if (turn) {
          if (++idle_passes_ > 2 * p_) deadlock(rank);
          pass_baton();
          cv_.notify_all();
        }
      } else {
        slot = ready;
        if (all_blocked()) deadlock(rank);
      }
      cv_.wait(lk);
    }
  }

  // Threaded mode: true when every live rank waits on an unsatisfied
  // condition. Evaluated under the lock, so it cannot race with a send.
  bool all_blocked() const {
    for (int r = 0; r < p_; ++r) {
      const auto i = static_cast<std::size_t>(r);
      if (done_[i]) continue;
      if (!waiting_[i] || waiting_[i]()) return false;
    }
    return true;
  }

  int p_;
  Mode mode_;
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::deque<Message>> chan_;
  std::vector<std::function<bool()>> waiting_;
  std::vector<bool> done_;
  int baton_ = 0;
  int idle_passes_ = 0;
  bool aborted_ = false;
  std::exception_ptr error_;
};

class Comm;

/// Per-rank handle passed to the rank body.
class Rank {
 public:
  Rank(Fabric& fabric, int id) : fabric_(&fabric), id_(id) {}

  int id() const { return id_; }
  int size() const { return fabric_->size(); }

  CostCounters& counters() { return counters_; }
  const CostCounters& counters() const { return counters_; }

  const std::string& phase() const { return phase_; }
  void set_phase(std::string p) { phase_ = std::move(p); }

  void send(int dst, int tag, Payload data) { fabric_->send(id_, dst, tag, std::move(data)); }
  Payload recv(int src, int tag) { return fabric_->recv(id_, src, tag); }

  Comm world();
  Comm comm(std::vector<int> members);

 private:
  Fabric* fabric_;
  int id_;
  std::string phase_ = "other";
  CostCounters counters_;
};

/// Sets the rank's phase for the lifetime of the guard.
class PhaseScope {
 public:
  PhaseScope(Rank& r, std::string phase) : r_(r), saved_(r.phase()) {
    r_.set_phase(std::move(phase));
  }
  ~PhaseScope() { r_.set_phase(saved_); }
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

 private:
  Rank& r_;
  std::string saved_;
};

/// A sub-communicator: an ordered list of world ranks containing the caller.
class Comm {
 public:
  Comm(Rank& rank, std::vector<int> members) : rank_(&rank), members_(std::move(members)) {
    const auto it = std::find(members_.begin(), members_.end(), rank.id());
    if (it == members_.end()) throw CommError("rank is not a member of the communicator");
    me_ = static_cast<int>(it - members_.begin());
  }

  int size() const { return static_cast<int>(members_.size()); }
  int index() const { return me_; }
  const std::vector<int>& members() const { return members_; }
  Rank& rank() const { return *rank_; }

  void send(int member, int tag, Payload data) const {
    rank_->send(members_[static_cast<std::size_t>(member)], tag, std::move(data));
  }
  Payload recv(int member, int tag) const {
    return rank_->recv(members_[static_cast<std::size_t>(member)], tag);
  }

  void charge(const char* collective, cost_model::Charge c) const {
    rank_->counters().charge(rank_->phase(), collective, c.messages, c.words);
  }

 private:
  Rank* rank_;
  std::vector<int> members_;
  int me_ = 0;
};

inline Comm Rank::world() {
  std::vector<int> all(static_cast<std::size_t>(size()));
  for (int r = 0; r < size(); ++r) all[static_cast<std::size_t>(r)] = r;
  return Comm(*this, std::move(all));
}

inline Comm Rank::comm(std::vector<int> members) { return Comm(*this, std::move(members)); }

struct RunOptions {
  Fabric::Mode mode = Fabric::Mode::threaded;
  std::size_t channel_capacity = 64;
};

/// Runs `body(Rank&)` on p ranks and returns each rank's counters. The
/// first exception thrown by any rank is rethrown after all ranks stop.
template <class F>
std::vector<CostCounters> run_ranks(int p, F&& body, RunOptions opt = {}) {
  if (p < 1) throw std::invalid_argument("run_ranks: need p >= 1");
  Fabric fabric(p, opt.mode, opt.channel_capacity);
  std::vector<CostCounters> out(static_cast<std::size_t>(p));
  auto work = [&](int r) {
    Rank rank(fabric, r);
    try {
      fabric.enter(r);
      body(rank);
    } catch (const Fabric::Aborted&) {
    } catch (...) {
      fabric.abort(std::current_exception());
    }
    out[static_cast<std::size_t>(r)] = rank.counters();
    fabric.finish(r);
  };
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(p));
  for (int r = 0; r < p; ++r) threads.emplace_back(work, r);
  for (auto& t : threads) t.join();
  if (fabric.error()) std::rethrow_exception(fabric.error());
  return out;
}

// ---------------------------------------------------------------------------
// Collectives

namespace tags {
inline constexpr int allgather = 101;
inline constexpr int reduce = 102;
inline constexpr int bcast = 103;
inline constexpr int scatter = 104;
inline constexpr int exchange = 105;
inline constexpr int gather = 106;
}  // namespace tags

/// The fixed reduction order used by every collective sum: a binomial tree
/// over member index where, for d = 1, 2, 4, ..., x[i] += x[i + d] for every
/// i that is a multiple of 2d. Exposed so tests can reproduce sums serially.
inline Payload tree_sum(std::vector<Payload> parts) {
  if (parts.empty()) return {};
  const std::size_t n = parts.size();
  for (std::size_t d = 1; d < n; d *= 2)
    for (std::size_t i = 0; i + d < n; i += 2 * d)
      for (std::size_t k = 0; k < parts[i].size(); ++k) parts[i][k] += parts[i + d][k];
  return std::move(parts[0]);
}

namespace detail {

inline void check_size(const Payload& got, std::size_t want, const char* what) {
  if (got.size() != want)
    throw CommError(std::string(what) + ": payload size mismatch across ranks");
}

// Binomial-tree sum to member 0 in tree_sum order. Returns the sum on member
// 0; other members return their partially reduced buffer (unspecified).
inline Payload reduce_to_zero(const Comm& c, Payload x) {
  const int n = c.size(), me = c.index();
  for (int d = 1; d < n; d *= 2) {
    if (me % (2 * d) == d) {
      c.send(me - d, tags::reduce, std::move(x));
      return {};
    }
    if (me % (2 * d) == 0 && me + d < n) {
      const Payload y = c.recv(me + d, tags::reduce);
      check_size(y, x.size(), "reduce");
      for (std::size_t k = 0; k < x.size(); ++k) x[k] += y[k];
    }
  }
  return x;
}

// Binomial broadcast from member 0.
inline Payload bcast_from_zero(const Comm& c, Payload x) {
  const int n = c.size(), me = c.index();
  int top = 1;
  while (top < n) top *= 2;
  for (int d = top / 2; d >= 1; d /= 2) {
    if (me % (2 * d) == 0 && me + d < n) c.send(me + d, tags::bcast, x);
    else if (me % (2 * d) == d) x = c.recv(me - d, tags::bcast);
  }
  return x;
}

}  // namespace detail

/// Concatenation of every member's payload in member order (Bruck's
/// algorithm, ceil(log2 n) rounds). Payloads must have equal size.
inline Payload allgather(const Comm& c, const Payload& local) {
  const int n = c.size(), me = c.index();
  const std::size_t w = local.size();
  c.charge("allgather", cost_model::allgather(n, static_cast<Index>(w)));
  if (n == 1) return local;
  // held[k] is the payload of member (me + k) mod n.
  Payload held = local;
  for (int d = 1; d < n; d *= 2) {
    const std::size_t blocks = static_cast<std::size_t>(std::min(d, n - d));
    Payload out(held.begin(), held.begin() + static_cast<std::ptrdiff_t>(blocks * w));
    c.send((me - d + n) % n, tags::allgather, std::move(out));
    const Payload in = c.recv((me + d) % n, tags::allgather);
    detail::check_size(in, blocks * w, "allgather");
    held.insert(held.end(), in.begin(), in.end());
  }
  Payload result(static_cast<std::size_t>(n) * w);
  for (int k = 0; k < n; ++k) {
    const int owner = (me + k) % n;
    std::copy_n(held.begin() + static_cast<std::ptrdiff_t>(k * w), w,
                result.begin() + static_cast<std::ptrdiff_t>(owner * w));
  }
  return result;
}

/// Elementwise sum delivered to member `root`.
inline Payload reduce(const Comm& c, int root, Payload x) {
  if (root < 0 || root >= c.size()) throw CommError("reduce: root out of range");
  c.charge("reduce", cost_model::tree(c.size(), static_cast<Index>(x.size())));
  x = detail::reduce_to_zero(c, std::move(x));
  if (root != 0) {
    if (c.index() == 0) c.send(root, tags::reduce, std::move(x));
    if (c.index() == root) x = c.recv(0, tags::reduce);
  }
  return c.index() == root ? x : Payload{};
}

/// Replicates member `root`'s payload on every member.
inline Payload bcast(const Comm& c, int root, Payload x) {
  if (root < 0 || root >= c.size()) throw CommError("bcast: root out of range");
  c.charge("bcast", cost_model::tree(c.size(), static_cast<Index>(x.size())));
  if (root != 0) {
    if (c.index() == root) c.send(0, tags::bcast, x);
    if (c.index() == 0) x = c.recv(root, tags::bcast);
  }
  return detail::bcast_from_zero(c, std::move(x));
}

/// Elementwise sum replicated on every member (reduce + broadcast, so every
/// member receives the bit-identical tree_sum result).
inline Payload allreduce(const Comm& c, Payload x) {
  c.charge("allreduce", cost_model::allreduce(c.size(), static_cast<Index>(x.size())));
  if (c.size() == 1) return x;
  const std::size_t w = x.size();
  x = detail::reduce_to_zero(c, std::move(x));
  x = detail::bcast_from_zero(c, std::move(x));
  detail::check_size(x, w, "allreduce");
  return x;
}

/// Member i receives slice i (of size counts[i], in order) of the elementwise
/// sum. Charged as the zero-padded uniform payload n * max(counts).
inline Payload reduce_scatter_v(const Comm& c, Payload x, const std::vector<std::size_t>& counts) {
  const int n = c.size();
  if (counts.size() != static_cast<std::size_t>(n))
    throw CommError("reduce_scatter: counts size differs from communicator size");
  std::size_t total = 0, mx = 0;
  for (auto k : counts) {
    total += k;
    mx = std::max(mx, k);
  }
  detail::check_size(x, total, "reduce_scatter");
  c.charge("reduce_scatter",
           cost_model::reduce_scatter(n, static_cast<Index>(mx * static_cast<std::size_t>(n))));
  if (n == 1) return x;
  x = detail::reduce_to_zero(c, std::move(x));
  const int me = c.index();
  if (me == 0) {
    std::size_t off = counts[0];
    for (int k = 1; k < n; ++k) {
      const auto len = counts[static_cast<std::size_t>(k)];
      c.send(k, tags::scatter,
             Payload(x.begin() + static_cast<std::ptrdiff_t>(off),
                     x.begin() + static_cast<std::ptrdiff_t>(off + len)));
      off += len;
    }
    x.resize(counts[0]);
    return x;
  }
  Payload mine = c.recv(0, tags::scatter);
  detail::check_size(mine, counts[static_cast<std::size_t>(me)], "reduce_scatter");
  return mine;
}

/// Uniform reduce_scatter: the payload is zero-padded to a multiple of n and
/// each member gets an equal slice (the padding is truncated from the last).
inline Payload reduce_scatter(const Comm& c, Payload x) {
  const auto n = static_cast<std::size_t>(c.size());
  const std::size_t slice = (x.size() + n - 1) / n;
  const std::size_t real = x.size();
  x.resize(slice * n, 0.0);
  Payload out = reduce_scatter_v(c, std::move(x), std::vector<std::size_t>(n, slice));
  const std::size_t begin = slice * static_cast<std::size_t>(c.index());
  const std::size_t keep = begin >= real ? 0 : std::min(slice, real - begin);
  out.resize(keep);
  return out;
}

// Dense-block helpers (column-major flattening).

inline Payload to_payload(const DenseBlock& m) { return Payload(m.data(), m.data() + m.size()); }

inline DenseBlock from_payload(const Payload& p, Index rows, Index cols,
                               std::size_t offset = 0) {
  DenseBlock m(rows, cols);
  std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(offset), rows * cols, m.data());
  return m;
}

inline void allreduce_in_place(const Comm& c, DenseBlock& m) {
  if (c.size() == 1) {
    c.charge("allreduce", cost_model::allreduce(1, m.size()));
    return;
  }
  m = from_payload(allreduce(c, to_payload(m)), m.rows(), m.cols());
}

// ---------------------------------------------------------------------------
// Grid topology

/// sqrt(p) x sqrt(p) logical grid over ranks 0..p-1. P(i, j) is rank j*q + i
/// (so the 1D order P(l) walks down columns); the transposed grid swaps the
/// roles of i and j.
class GridTopology {
 public:
  explicit GridTopology(int p, bool transposed = false) : p_(p), transposed_(transposed) {
    if (p < 1) throw std::invalid_argument("GridTopology: p must be >= 1");
    q_ = 0;
    while ((q_ + 1) * (q_ + 1) <= p) ++q_;
    if (q_ * q_ != p)
      throw std::invalid_argument("GridTopology: p = " + std::to_string(p) +
                                  " is not a perfect square");
  }

  int p() const { return p_; }
  int q() const { return q_; }
  bool is_transposed() const { return transposed_; }

  int rank_of(int i, int j) const {
    check(i);
    check(j);
    return transposed_ ? i * q_ + j : j * q_ + i;
  }

  /// Logical (i, j) of a world rank.
  std::pair<int, int> coords(int rank) const {
    if (rank < 0 || rank >= p_) throw std::out_of_range("GridTopology: rank out of range");
    return transposed_ ? std::pair{rank / q_, rank % q_} : std::pair{rank % q_, rank / q_};
  }

  GridTopology transposed() const { return GridTopology(p_, !transposed_); }

  /// Ranks P(i, 0..q-1) in column order.
  std::vector<int> row_members(int i) const {
    std::vector<int> m;
    for (int j = 0; j < q_; ++j) m.push_back(rank_of(i, j));
    return m;
  }

  /// Ranks P(0..q-1, j) in row order.
  std::vector<int> col_members(int j) const {
    std::vector<int> m;
    for (int i = 0; i < q_; ++i) m.push_back(rank_of(i, j));
    return m;
  }

  friend bool operator==(const GridTopology&, const GridTopology&) = default;

 private:
  void check(int x) const {
    if (x < 0 || x >= q_) throw std::out_of_range("GridTopology: coordinate out of range");
  }

  int p_;
  int q_;
  bool transposed_;
};

inline GridTopology transpose_grid(const GridTopology& g) { return g.transposed(); }

inline Comm row_comm(Rank& r, const GridTopology& g) {
  return r.comm(g.row_members(g.coords(r.id()).first));
}

inline Comm col_comm(Rank& r, const GridTopology& g) {
  return r.comm(g.col_members(g.coords(r.id()).second));
}

/// Sum over the whole grid as a row allreduce followed by a column allreduce.
inline void grid_allreduce(Rank& r, const GridTopology& g, DenseBlock& m) {
  allreduce_in_place(row_comm(r, g), m);
  allreduce_in_place(col_comm(r, g), m);
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_PROCGRID_HPP
