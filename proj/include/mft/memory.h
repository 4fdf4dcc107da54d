/**
 * @file memory.h
 * @brief Single-device parameter sharding with disk offload, and memory probes.
 *
 * Parameters are grouped into contiguous segments in model-definition order.
 * The manager keeps a residency table (InMemory / OnDisk plus the spill file of
 * every segment) and pages segments in on first touch, evicting the least
 * recently used ones whenever the resident total would exceed the budget.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <list>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

#include "mft/nn.h"
#include "mft/tensor.h"

namespace mft {

enum class Residency { InMemory, OnDisk };

struct Segment {
    int32_t id = 0;
    std::vector<std::string> param_names;
    int64_t bytes = 0;
    Residency state = Residency::InMemory;
    std::filesystem::path disk_path;
    int64_t offset = 0;
};

struct ShardManifest {
    std::vector<Segment> segments;
    int64_t budget_bytes = 0;

    int64_t total_bytes() const;
    int64_t max_segment_bytes() const;
};

/// Smallest indivisible group of parameters (one module's tensors).
struct ShardUnit {
    std::vector<std::string> param_names;
    int64_t bytes = 0;
};

struct SegmentCount {
    int64_t k = 1;
};
struct ByteBudget {
    int64_t bytes = 0;
};
using ShardPolicy = std::variant<SegmentCount, ByteBudget>;

/// Groups parameters by owning module, preserving order.
std::vector<ShardUnit> shard_units(const std::vector<NamedParam>& params);

/**
 * Partitions units into contiguous segments.
 *
 * SegmentCount(k) picks the contiguous split into at most k parts that
 * minimizes the largest part; the budget becomes that largest part.
 * ByteBudget(b) fills greedily in order; a unit larger than b becomes a
 * singleton segment (a warning is appended) unless strict, in which case
 * BudgetTooSmall is raised.
 */
ShardManifest build_manifest(const std::vector<ShardUnit>& units, const ShardPolicy& policy, bool strict = false,
                             std::vector<std::string>* warnings = nullptr);

enum class Pass { Forward, Backward };

class ShardManager final : public ResidencyHook {
public:
    /// Tags every parameter with its segment and offloads all segments to spill_dir.
    ShardManager(ShardManifest manifest, const std::vector<NamedParam>& params, std::filesystem::path spill_dir);
    /// Brings every segment back into memory and removes the spill files.
    ~ShardManager() override;

    ShardManager(const ShardManager&) = delete;
    ShardManager& operator=(const ShardManager&) = delete;

    void acquire(int32_t id);
    void release(int32_t id);
    void require(int32_t segment, bool write) override;

    Residency state(int32_t id) const;
    ShardManifest manifest() const;
    int64_t resident_bytes() const;
    int64_t peak_resident_bytes() const;
    void reset_peak();
    int64_t loads() const { return loads_; }

    /// Runs fn for one pass; parameters page in and out as the pass touches them.
    template <typename Fn>
    auto sharded_pass(Pass pass, Fn&& fn) {
        current_pass_ = pass;
        return fn();
    }
    Pass current_pass() const { return current_pass_; }

    /// JSON sidecar describing segments, names, byte ranges and states.
    void write_sidecar() const;

private:
    struct Slot {
        TensorImpl* impl;
        std::shared_ptr<TensorImpl> keep;
        bool has_grad = false;
    };

    void load_locked(Segment& seg);
    void offload_locked(Segment& seg);
    void touch_lru(int32_t id);

    ShardManifest manifest_;
    std::vector<std::vector<Slot>> slots_;
    std::vector<bool> dirty_;
    std::list<int32_t> lru_;
    std::filesystem::path spill_dir_;
    int64_t resident_ = 0;
    int64_t peak_ = 0;
    int64_t loads_ = 0;
    Pass current_pass_ = Pass::Forward;
    mutable std::recursive_mutex mu_;
};

enum class ProbeBackend { OsResident, AllocatorEstimate };

struct MemoryProbe {
    ProbeBackend backend = ProbeBackend::OsResident;

    /// OsResident falls back to the allocator estimate where the OS value is unavailable.
    int64_t read() const;
    static bool os_resident_available();
};

int64_t probe_rss(ProbeBackend backend = ProbeBackend::OsResident);

/// Spill directory from MFT_SPILL_DIR, else a per-process directory under the system temp path.
std::filesystem::path default_spill_dir();

}  // namespace mft
