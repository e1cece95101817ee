// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic synthetic workloads. A profile describes an activity loop
// (listing, reading, copying, encrypting, ...) and the generator replays it
// as nested kernel call trees plus a 100 ms resource sampler, the same
// shapes trace_ingest parses from a real capture.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "encguard/error.hpp"
#include "encguard/features.hpp"
#include "encguard/random.hpp"
#include "encguard/trace_ingest.hpp"

namespace encguard {

enum class WorkloadKind { Benign, CryptoTool, Ransomware };

inline std::string_view to_string(WorkloadKind k) {
  switch (k) {
    case WorkloadKind::Benign: return "benign";
    case WorkloadKind::CryptoTool: return "crypto_tool";
    case WorkloadKind::Ransomware: return "ransomware";
  }
  return "?";
}

/// What the process does with its files once active.
enum class Activity { List, Read, Write, Copy, Compute, Encrypt, MmapEncrypt };

inline std::string_view to_string(Activity a) {
  switch (a) {
    case Activity::List: return "list";
    case Activity::Read: return "read";
    case Activity::Write: return "write";
    case Activity::Copy: return "copy";
    case Activity::Compute: return "compute";
    case Activity::Encrypt: return "encrypt";
    case Activity::MmapEncrypt: return "mmap_encrypt";
  }
  return "?";
}

struct WorkloadProfile {
  std::string name;
  WorkloadKind kind = WorkloadKind::Benign;
  Activity activity = Activity::Read;
  std::optional<std::uint64_t> seed;

  int file_count = 16;
  double file_size = 65536;   // bytes per file
  double block_size = 4096;   // bytes per read/write call
  double sleep_ms = 1.0;      // pause per block
  double burstiness = 1.0;    // blocks issued back to back before one longer pause
  double duration_s = 5.0;
  std::map<std::string, double> symbol_mix;  // background invocations per second

  double rss_mb = 10.0;
  double rss_ramp_mb = 0.0;   // growth spread over the active phase
  double cpu_percent = 5.0;   // baseline on top of measured busy time
  std::optional<double> onset_fraction;  // defaults: 0.1 ransomware, 0 crypto tool
  bool fsync_files = false;
  bool rename_files = false;
  bool unlink_source = false;
  bool edge = false;  // evaluated separately on fresh seeds

  std::string binary;  // defaults to name
  std::string user = "u1";
  std::string path_scope = "$HOME/**";
  std::string target_path = "/home/u1/docs";
  std::string file_type = "user_home_t";
  std::string kernel_version = "6.8.0-31-generic";

  bool encrypts() const { return kind != WorkloadKind::Benign; }

  double onset() const {
    if (onset_fraction) return *onset_fraction;
    return kind == WorkloadKind::Ransomware ? 0.1 : 0.0;
  }
};

struct GroundTruth {
  Label label = Label::Benign;
  std::optional<double> onset_us;
};

inline void validate(const WorkloadProfile& p) {
  auto bad = [&](const std::string& why) { throw Error(ErrorCode::InvalidProfile, "profile '" + p.name + "': " + why); };
  if (p.name.empty()) throw Error(ErrorCode::InvalidProfile, "profile without a name");
  if (!p.seed) bad("seed is mandatory");
  if (p.file_count <= 0) bad("file_count must be positive");
  if (!(p.file_size > 0) || !(p.block_size > 0)) bad("file_size and block_size must be positive");
  if (!(p.sleep_ms >= 0) || !std::isfinite(p.sleep_ms)) bad("sleep_ms must be non-negative");
  if (!(p.burstiness >= 1.0)) bad("burstiness must be >= 1");
  if (!(p.duration_s > 0) || p.duration_s > 600) bad("duration_s must lie in (0, 600]");
  if (!(p.rss_mb > 0) || !(p.rss_ramp_mb >= 0) || !(p.cpu_percent >= 0)) bad("resource levels must be positive");
  const double on = p.onset();
  if (!(on >= 0.0 && on < 1.0)) bad("onset_fraction must lie in [0, 1)");
  const bool enc_activity = p.activity == Activity::Encrypt || p.activity == Activity::MmapEncrypt;
  if (p.encrypts() != enc_activity) bad("only crypto tools and ransomware may use an encrypt activity");
  const auto& syms = detector_symbols();
  for (const auto& [s, rate] : p.symbol_mix) {
    if (std::find(syms.begin(), syms.end(), s) == syms.end()) bad("symbol_mix names unknown symbol '" + s + "'");
    if (!(rate >= 0) || !std::isfinite(rate)) bad("symbol_mix rates must be non-negative");
  }
  if (p.target_path.empty() || p.target_path.front() != '/') bad("target_path must be absolute");
}

// ---------------------------------------------------------------------------
// call-tree templates

/// A call tree written as `a(b c(d))`: children in parentheses, siblings
/// separated by spaces.
struct CallTree {
  std::string symbol;
  std::vector<CallTree> kids;
};

inline std::vector<CallTree> parse_call_forest(std::string_view spec) {
  std::size_t pos = 0;
  auto skip = [&] {
    while (pos < spec.size() && spec[pos] == ' ') ++pos;
  };
  auto forest = [&](auto&& self) -> std::vector<CallTree> {
    std::vector<CallTree> out;
    skip();
    while (pos < spec.size() && spec[pos] != ')') {
      std::size_t b = pos;
      while (pos < spec.size() && spec[pos] != '(' && spec[pos] != ')' && spec[pos] != ' ') ++pos;
      CallTree t{std::string(spec.substr(b, pos - b)), {}};
      if (pos < spec.size() && spec[pos] == '(') {
        ++pos;
        t.kids = self(self);
        if (pos >= spec.size() || spec[pos] != ')') throw Error(ErrorCode::InvalidProfile, "unbalanced call template");
        ++pos;
      }
      out.push_back(std::move(t));
      skip();
    }
    return out;
  };
  auto f = forest(forest);
  if (pos != spec.size()) throw Error(ErrorCode::InvalidProfile, "unbalanced call template");
  return f;
}

namespace templates {

inline constexpr std::string_view kRead =
    "ksys_read(vfs_read(rw_verify_area(security_file_permission) filemap_read(filemap_get_pages copy_page_to_iter) "
    "fsnotify_parent fsnotify))";
inline constexpr std::string_view kWrite =
    "ksys_write(vfs_write(rw_verify_area(security_file_permission) ext4_file_write_iter(generic_perform_write("
    "ext4_da_write_begin(grab_cache_page_write_begin) copy_page_from_iter_atomic ext4_da_write_end(lock_page_memcg "
    "mod_node_page_state)) balance_dirty_pages_ratelimited) fsnotify_parent fsnotify))";
inline constexpr std::string_view kOpen =
    "do_sys_openat2(do_filp_open(path_openat(link_path_walk(inode_permission) "
    "security_file_open(selinux_file_open(avc_has_perm)))) kmem_cache_alloc)";
inline constexpr std::string_view kClose =
    "filp_close(dnotify_flush locks_remove_posix) __fput(fsnotify locks_remove_file dput mntput kmem_cache_free)";
inline constexpr std::string_view kFsync =
    "do_fsync(ext4_sync_file(file_write_and_wait_range(filemap_fdatawrite_wbc) jbd2_complete_transaction))";
inline constexpr std::string_view kRename = "do_renameat2(vfs_rename(fsnotify))";
inline constexpr std::string_view kUnlink = "do_unlinkat(vfs_unlink(fsnotify))";
inline constexpr std::string_view kStat = "vfs_statx(vfs_getattr(security_file_permission))";
inline constexpr std::string_view kReaddir = "iterate_dir(ext4_readdir(filldir64 filldir64 filldir64 filldir64))";
inline constexpr std::string_view kAnonFault =
    "handle_mm_fault(__handle_mm_fault(do_anonymous_page(mem_cgroup_charge(try_charge(refill_stock "
    "propagate_protected_usage) memcg_check_events) page_add_new_anon_rmap lru_cache_add(lru_add_drain_cpu))))";
inline constexpr std::string_view kMmap = "do_mmap(mmap_region(vm_area_alloc vma_interval_tree_augment_rotate))";
inline constexpr std::string_view kMunmap = "do_munmap(unmap_region(tlb_finish_mmu) vma_interval_tree_augment_rotate)";
inline constexpr std::string_view kReadFault = "handle_mm_fault(__handle_mm_fault(do_fault(filemap_map_pages)))";
inline constexpr std::string_view kWriteFault =
    "handle_mm_fault(__handle_mm_fault(do_fault(filemap_page_mkwrite(lock_page_memcg) mod_node_page_state)))";
// Per-block work of a cipher engine: buffer churn and a worker handoff.
inline constexpr std::string_view kCipherBlock =
    "__kmalloc(kmalloc_slab) try_to_wake_up(kick_process x2apic_send_IPI) raw_spin_trylock kfree(put_cpu_partial)";
inline constexpr std::string_view kCompute = "futex_wake(wake_up_common) futex_wait(mutex_unlock)";

/// Background template for a detector symbol of the symbol mix.
inline std::string_view background_for(std::string_view sym) {
  static const std::map<std::string_view, std::string_view> m = {
      {"wake_up_common", "futex_wake(wake_up_common)"},
      {"available_idle_cpu", "try_to_wake_up(select_task_rq_fair(available_idle_cpu cpus_share_cache) ttwu_do_wakeup)"},
      {"cpus_share_cache", "try_to_wake_up(select_task_rq_fair(cpus_share_cache))"},
      {"attach_entity_load_avg", "select_task_rq_fair(attach_entity_load_avg)"},
      {"switch_mm_irqs_off", "finish_task_switch(switch_mm_irqs_off enter_lazy_tlb)"},
      {"enter_lazy_tlb", "finish_task_switch(enter_lazy_tlb)"},
      {"kmalloc_slab", "__kmalloc(kmalloc_slab)"},
      {"put_cpu_partial", "kmem_cache_free(put_cpu_partial)"},
      {"vma_interval_tree_augment_rotate", "do_mmap(mmap_region(vm_area_alloc vma_interval_tree_augment_rotate))"},
      {"x2apic_send_IPI", "try_to_wake_up(x2apic_send_IPI)"},
      {"kick_process", "try_to_wake_up(kick_process)"},
      {"refill_stock", "mem_cgroup_charge(try_charge(refill_stock))"},
      {"propagate_protected_usage", "mem_cgroup_charge(try_charge(propagate_protected_usage))"},
      {"memcg_check_events", "mem_cgroup_charge(memcg_check_events)"},
      {"lru_add_drain_cpu", "lru_cache_add(lru_add_drain_cpu)"},
      {"dnotify_flush", "filp_close(dnotify_flush)"},
  };
  auto it = m.find(sym);
  return it == m.end() ? sym : it->second;
}

inline constexpr std::string_view kHousekeeping[] = {"schedule", "irq_enter", "irq_exit", "tick_nohz_stop_sched_tick"};

}  // namespace templates

// ---------------------------------------------------------------------------
// generator

namespace detail {

inline constexpr double kMiB = 1024.0 * 1024.0;
inline constexpr double kSampleUs = 100000.0;
inline constexpr double kSessionStartUs = 1e6;

inline double ns(double us) { return std::round(us * 1000.0) / 1000.0; }

class SessionWriter {
 public:
  SessionWriter(const WorkloadProfile& p, Rng& rng, TraceSession& out)
      : p_(p), rng_(rng), out_(out), t_(kSessionStartUs), end_(kSessionStartUs + p.duration_s * 1e6) {
    onset_ = kSessionStartUs + p.onset() * p.duration_s * 1e6;
    pid_ = 2000 + static_cast<int>(*p.seed % 30000);
    cpu_ = static_cast<int>(*p.seed % 4);
    comm_ = (p.binary.empty() ? p.name : p.binary).substr(0, 15);
    ramp_start_ = p.encrypts() ? onset_ : kSessionStartUs;
    // the same binary starts with a different footprint from run to run
    rss_scale_ = uniform(rng_, 0.75, 1.25);
    plan_background();
    next_sample_ = kSessionStartUs;
  }

  double now() const { return t_; }
  double end() const { return end_; }
  double onset() const { return onset_; }

  void run(std::string_view spec) {
    flush_until(t_);
    const double t0 = t_;
    for (const auto& tree : forest(spec)) emit(tree, 0);
    busy_ += t_ - t0;
  }

  /// Charges data-copy time for `bytes` at `mb_per_s` to the process.
  void copy_cost(double bytes, double mb_per_s) {
    const double d = bytes / (mb_per_s * kMiB) * 1e6;
    t_ += d;
    busy_ += d;
  }

  void count_read(double bytes) {
    read_count_ += 1;
    read_bytes_ += bytes;
  }
  void count_write(double bytes) {
    write_count_ += 1;
    write_bytes_ += bytes;
  }

  void sleep_ms(double ms) { flush_until(t_ + ms * 1000.0); }

  void maybe_migrate() {
    if (uniform01(rng_) < 0.01) cpu_ = static_cast<int>(uniform_below(rng_, 4));
  }

  void finish() {
    flush_until(end_);
    // a final sample exactly at the end keeps the last window covered
    if (out_.samples.empty() || out_.samples.back().timestamp_us < end_) push_sample(end_);
  }

 private:
  struct Pending {
    double t;
    std::string_view spec;
  };

  const std::vector<CallTree>& forest(std::string_view spec) {
    auto it = cache_.find(spec);
    if (it == cache_.end()) it = cache_.emplace(spec, parse_call_forest(spec)).first;
    return it->second;
  }

  double rss_at(double t) const {
    double r = p_.rss_mb * rss_scale_ * kMiB;
    if (t > ramp_start_ && end_ > ramp_start_) r += p_.rss_ramp_mb * kMiB * std::min(1.0, (t - ramp_start_) / (end_ - ramp_start_));
    return r;
  }

  void plan_background() {
    const double ticks = std::ceil((end_ - kSessionStartUs) / kSampleUs);
    for (double k = 0; k < ticks; ++k) {
      const double a = kSessionStartUs + k * kSampleUs, b = std::min(end_, a + kSampleUs);
      for (const auto& [sym, rate] : p_.symbol_mix) {
        auto n = poisson(rng_, rate * (b - a) / 1e6);
        for (std::uint64_t i = 0; i < n; ++i) pending_.push_back({uniform(rng_, a, b), templates::background_for(sym)});
      }
      for (auto hk : templates::kHousekeeping) {
        auto n = poisson(rng_, 5.0 * (b - a) / 1e6);
        for (std::uint64_t i = 0; i < n; ++i) pending_.push_back({uniform(rng_, a, b), hk});
      }
      // anonymous faults track RSS growth, one fault-around per 256 KiB
      const double grow = (rss_at(b) - rss_at(a)) / (256.0 * 1024.0);
      auto faults = static_cast<std::uint64_t>(std::floor(grow)) + (uniform01(rng_) < grow - std::floor(grow) ? 1 : 0);
      for (std::uint64_t i = 0; i < faults; ++i) pending_.push_back({uniform(rng_, a, b), templates::kAnonFault});
    }
    // keep the tail clear so no call tree runs past the final sample
    std::erase_if(pending_, [&](const Pending& x) { return x.t > end_ - 1000.0; });
    std::stable_sort(pending_.begin(), pending_.end(), [](const Pending& x, const Pending& y) { return x.t < y.t; });
  }

  void flush_until(double target) {
    target = std::min(target, end_);
    while (true) {
      const double tb = next_bg_ < pending_.size() ? pending_[next_bg_].t : INFINITY;
      const double ts = next_sample_;
      const double t = std::min(tb, ts);
      if (t > target) break;
      if (ts <= tb) {
        push_sample(ts);
        next_sample_ += kSampleUs;
      } else {
        t_ = std::max(t_, tb);
        const double t0 = t_;
        for (const auto& tree : forest(pending_[next_bg_].spec)) emit(tree, 0);
        busy_ += t_ - t0;
        ++next_bg_;
      }
    }
    t_ = std::max(t_, target);
  }

  void push_sample(double ts) {
    ResourceSample s;
    s.timestamp_us = ns(ts);
    const double window = out_.samples.empty() ? kSampleUs : ts - out_.samples.back().timestamp_us;
    const double busy_pct = window > 0 ? 100.0 * (busy_ - busy_at_sample_) / window : 0.0;
    busy_at_sample_ = busy_;
    s.cpu_percent = std::round(std::clamp(p_.cpu_percent + busy_pct + normal(rng_, 0.0, 1.0), 0.0, 100.0) * 1000) / 1000;
    s.rss = std::round(rss_at(ts) * (1.0 + normal(rng_, 0.0, 0.01)));
    s.vms = std::round(s.rss * 2.2 + 200 * kMiB);
    s.read_count = read_count_;
    s.write_count = write_count_;
    s.read_bytes = read_bytes_;
    s.write_bytes = write_bytes_;
    out_.samples.push_back(s);
  }

  void emit(const CallTree& node, int depth) {
    TraceEvent e;
    e.cpu = cpu_;
    e.pid = pid_;
    e.comm = comm_;
    e.symbol = node.symbol;
    e.depth = depth;
    e.timestamp_us = ns(t_);
    if (node.kids.empty()) {
      const double d = ns(uniform(rng_, 0.1, 1.5));
      e.kind = EventKind::Leaf;
      e.duration_us = d;
      t_ = e.timestamp_us + d + 0.05;
      out_.events.push_back(std::move(e));
      return;
    }
    e.kind = EventKind::Entry;
    const double t0 = e.timestamp_us;
    TraceEvent exit = e;
    out_.events.push_back(std::move(e));
    t_ = t0 + 0.1;
    for (const auto& k : node.kids) emit(k, depth + 1);
    t_ = ns(t_ + uniform(rng_, 0.05, 0.5));
    exit.kind = EventKind::Exit;
    exit.timestamp_us = t_;
    exit.duration_us = ns(t_ - t0);
    exit.cpu = cpu_;
    out_.events.push_back(std::move(exit));
    t_ += 0.05;
  }

  const WorkloadProfile& p_;
  Rng& rng_;
  TraceSession& out_;
  double t_, end_, onset_ = 0, ramp_start_ = 0, rss_scale_ = 1.0;
  int pid_ = 0, cpu_ = 0;
  std::string comm_;
  std::vector<Pending> pending_;
  std::size_t next_bg_ = 0;
  double next_sample_ = 0;
  double busy_ = 0, busy_at_sample_ = 0;
  double read_count_ = 0, write_count_ = 0, read_bytes_ = 0, write_bytes_ = 0;
  std::map<std::string_view, std::vector<CallTree>> cache_;
};

/// One pass over the profile's files, stopping at `until`.
inline void run_activity(const WorkloadProfile& p, Activity a, SessionWriter& w, Rng& rng, double until) {
  namespace T = templates;
  const auto blocks = std::max<long>(1, static_cast<long>(std::ceil(p.file_size / p.block_size)));
  const auto burst = std::max<long>(1, std::lround(p.burstiness));
  long in_burst = 0;
  auto pace = [&] {
    if (++in_burst >= burst) {
      w.sleep_ms(p.sleep_ms * static_cast<double>(burst) * uniform(rng, 1.0, 1.1));
      in_burst = 0;
    }
    w.maybe_migrate();
  };
  auto done = [&] { return w.now() >= until - 2000.0; };

  for (int f = 0; !done(); f = (f + 1) % p.file_count) {
    switch (a) {
      case Activity::List:
        if (f % 16 == 0) w.run(T::kReaddir);
        w.run(T::kStat);
        pace();
        break;
      case Activity::Compute:
        w.run(T::kCompute);
        w.copy_cost(p.block_size, 500);
        pace();
        break;
      case Activity::Read:
      case Activity::Write:
      case Activity::Copy:
        w.run(T::kOpen);
        for (long b = 0; b < blocks && !done(); ++b) {
          if (a != Activity::Write) {
            w.run(T::kRead);
            w.copy_cost(p.block_size, 2000);
            w.count_read(p.block_size);
          }
          if (a != Activity::Read) {
            w.run(T::kWrite);
            w.copy_cost(p.block_size, 1500);
            w.count_write(p.block_size);
          }
          pace();
        }
        if (done()) return;  // cut off mid-file when the session ends
        if (p.fsync_files && a != Activity::Read) w.run(T::kFsync);
        w.run(T::kClose);
        if (p.rename_files && a != Activity::Read) w.run(T::kRename);
        break;
      case Activity::Encrypt:
      case Activity::MmapEncrypt: {
        const bool mm = a == Activity::MmapEncrypt;
        w.run(T::kOpen);
        if (mm) w.run(T::kMmap);
        for (long b = 0; b < blocks && !done(); ++b) {
          if (mm) {
            w.run(T::kReadFault);
          } else {
            w.run(T::kRead);
            w.count_read(p.block_size);
          }
          w.run(T::kCipherBlock);
          w.copy_cost(p.block_size, 400);
          if (mm) {
            w.run(T::kWriteFault);
          } else {
            w.run(T::kWrite);
            w.count_write(p.block_size);
          }
          pace();
        }
        if (done()) return;
        if (mm) {
          // msync pushes the dirty mapping out in one go
          w.run(T::kFsync);
          w.count_write(p.file_size);
          w.run(T::kMunmap);
        } else if (p.fsync_files) {
          w.run(T::kFsync);
        }
        w.run(T::kClose);
        if (p.rename_files) w.run(T::kRename);
        if (p.unlink_source) w.run(T::kUnlink);
        break;
      }
    }
  }
}

}  // namespace detail

/// Write-related view used by the label fidelity check.
inline std::vector<double> write_signature(const TraceSession& s, const Window& w) {
  static const std::vector<std::string> syms = {"fsnotify", "fsnotify_parent", "mod_node_page_state", "lock_page_memcg",
                                                "locks_remove_posix"};
  std::vector<double> v = {w.write_count, w.write_bytes};
  v.resize(2 + syms.size(), 0.0);
  for (auto i : w.events) {
    const auto& e = s.events[i];
    if (e.kind == EventKind::Exit) continue;
    for (std::size_t k = 0; k < syms.size(); ++k) {
      if (e.symbol == syms[k]) v[2 + k] += 1;
    }
  }
  return v;
}

/// True when some window past the onset differs from every pre-onset window
/// in its write-related columns.
inline bool label_fidelity(const TraceSession& s, double interval_us = kDefaultIntervalUs) {
  if (!s.meta.label || *s.meta.label == Label::Benign) return true;
  auto windows = window_session(s, interval_us);
  const double onset = s.meta.onset_us.value_or(-INFINITY);
  std::vector<std::vector<double>> pre, post;
  for (const auto& w : windows) (w.end_us <= onset ? pre : post).push_back(write_signature(s, w));
  return std::any_of(post.begin(), post.end(), [&](const std::vector<double>& v) {
    return std::none_of(pre.begin(), pre.end(), [&](const std::vector<double>& u) { return u == v; });
  });
}

inline std::pair<TraceSession, GroundTruth> generate(const WorkloadProfile& profile) {
  validate(profile);
  Rng rng(*profile.seed);
  TraceSession s;
  s.session_id = profile.name;
  auto& m = s.meta;
  m.kernel_version = profile.kernel_version;
  m.binary = profile.binary.empty() ? profile.name : profile.binary;
  m.user = profile.user;
  m.path_scope = profile.path_scope;
  m.target_path = profile.target_path;
  m.file_type = profile.file_type;
  m.profile = profile.name;
  m.workload_kind = std::string(to_string(profile.kind));
  m.edge_case = profile.edge;

  detail::SessionWriter w(profile, rng, s);
  GroundTruth gt;
  if (profile.encrypts()) {
    gt.label = Label::Encrypted;
    gt.onset_us = w.onset();
    // reconnaissance before the onset looks like a directory walk
    if (w.onset() > w.now()) {
      WorkloadProfile recon = profile;
      recon.sleep_ms = std::max(profile.sleep_ms, 5.0);
      recon.burstiness = 1.0;
      detail::run_activity(recon, Activity::List, w, rng, w.onset());
    }
    detail::run_activity(profile, profile.activity, w, rng, w.end());
  } else {
    detail::run_activity(profile, profile.activity, w, rng, w.end());
  }
  w.finish();

  m.label = gt.label;
  m.onset_us = gt.onset_us;
  m.pid = s.events.empty() ? 0 : s.events.front().pid;
  m.comm = s.events.empty() ? m.binary : s.events.front().comm;
  if (!label_fidelity(s)) {
    throw Error(ErrorCode::InvalidProfile, "profile '" + profile.name + "' yields no post-onset write change");
  }
  return {std::move(s), gt};
}

// ---------------------------------------------------------------------------
// manifest and corpus

struct Manifest {
  std::vector<WorkloadProfile> profiles;
  int repetitions = 3;
  std::uint64_t capture_cap_bytes = kDefaultCaptureCapBytes;
};

namespace detail {

inline WorkloadKind parse_kind(const std::string& s) {
  if (s == "benign") return WorkloadKind::Benign;
  if (s == "crypto_tool" || s == "crypto") return WorkloadKind::CryptoTool;
  if (s == "ransomware") return WorkloadKind::Ransomware;
  throw Error(ErrorCode::InvalidProfile, "unknown workload kind '" + s + "'");
}

inline Activity parse_activity(const std::string& s) {
  for (auto a : {Activity::List, Activity::Read, Activity::Write, Activity::Copy, Activity::Compute, Activity::Encrypt,
                 Activity::MmapEncrypt}) {
    if (to_string(a) == s) return a;
  }
  throw Error(ErrorCode::InvalidProfile, "unknown activity '" + s + "'");
}

}  // namespace detail

inline WorkloadProfile profile_from_yaml(const YAML::Node& n) {
  WorkloadProfile p;
  try {
    p.name = n["name"].as<std::string>();
    p.kind = detail::parse_kind(n["kind"].as<std::string>("benign"));
    p.activity = detail::parse_activity(n["activity"].as<std::string>(p.kind == WorkloadKind::Benign ? "read" : "encrypt"));
    if (n["seed"]) p.seed = n["seed"].as<std::uint64_t>();
    p.file_count = n["file_count"].as<int>(p.file_count);
    p.file_size = n["file_size"].as<double>(p.file_size);
    p.block_size = n["block_size"].as<double>(p.block_size);
    p.sleep_ms = n["sleep_ms"].as<double>(p.sleep_ms);
    p.burstiness = n["burstiness"].as<double>(p.burstiness);
    p.duration_s = n["duration_s"].as<double>(p.duration_s);
    if (n["symbol_mix"]) {
      for (const auto& kv : n["symbol_mix"]) p.symbol_mix[kv.first.as<std::string>()] = kv.second.as<double>();
    }
    p.rss_mb = n["rss_mb"].as<double>(p.rss_mb);
    p.rss_ramp_mb = n["rss_ramp_mb"].as<double>(p.rss_ramp_mb);
    p.cpu_percent = n["cpu_percent"].as<double>(p.cpu_percent);
    if (n["onset_fraction"]) p.onset_fraction = n["onset_fraction"].as<double>();
    p.fsync_files = n["fsync"].as<bool>(false);
    p.rename_files = n["rename"].as<bool>(false);
    p.unlink_source = n["unlink"].as<bool>(false);
    p.edge = n["edge"].as<bool>(false);
    p.binary = n["binary"].as<std::string>("");
    p.user = n["user"].as<std::string>(p.user);
    p.path_scope = n["path_scope"].as<std::string>(p.path_scope);
    p.target_path = n["target_path"].as<std::string>("/home/" + p.user + "/docs");
    p.file_type = n["file_type"].as<std::string>(p.file_type);
    p.kernel_version = n["kernel_version"].as<std::string>(p.kernel_version);
  } catch (const YAML::Exception& ex) {
    throw Error(ErrorCode::InvalidProfile, std::string("manifest profile: ") + ex.what());
  }
  validate(p);
  return p;
}

/// Either a bare list of profiles or a map with `profiles`, `repetitions`
/// and `capture_cap_bytes`.
inline Manifest manifest_from_yaml(const std::string& text) {
  Manifest m;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& ex) {
    throw Error(ErrorCode::ConfigError, std::string("manifest: ") + ex.what());
  }
  // Node assignment writes through to the referenced node, so bind once.
  YAML::Node list = root.IsMap() ? root["profiles"] : root;
  if (root.IsMap()) {
    m.repetitions = root["repetitions"].as<int>(m.repetitions);
    m.capture_cap_bytes = root["capture_cap_bytes"].as<std::uint64_t>(m.capture_cap_bytes);
  }
  if (list && !list.IsSequence()) throw Error(ErrorCode::ConfigError, "manifest profiles must be a list");
  if (list) {
    for (const auto& n : list) m.profiles.push_back(profile_from_yaml(n));
  }
  if (m.repetitions < 1) throw Error(ErrorCode::ConfigError, "repetitions must be >= 1");
  return m;
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_yaml(ss.str());
}

/// Seed of repetition `rep` of `p` within a corpus drawn under `corpus_seed`.
inline std::uint64_t run_seed(const WorkloadProfile& p, std::uint64_t corpus_seed, std::uint64_t rep) {
  return derive_seed(derive_seed(corpus_seed, *p.seed), rep);
}

/// Profiles x repetitions in manifest order. Session ids are `<name>.r<rep>`;
/// `first_rep` shifts the repetition index so held-out draws use fresh seeds.
inline std::vector<TraceSession> corpus(const std::vector<WorkloadProfile>& manifest, int repetitions,
                                        std::uint64_t corpus_seed = 42, int first_rep = 0) {
  std::vector<TraceSession> out;
  out.reserve(manifest.size() * static_cast<std::size_t>(std::max(repetitions, 0)));
  for (const auto& p : manifest) {
    validate(p);
    for (int r = first_rep; r < first_rep + repetitions; ++r) {
      WorkloadProfile run = p;
      run.seed = run_seed(p, corpus_seed, static_cast<std::uint64_t>(r));
      auto [s, gt] = generate(run);
      s.session_id = p.name + ".r" + std::to_string(r);
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace encguard
