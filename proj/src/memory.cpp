/**
 * @file memory.cpp
 */
#include "mft/memory.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>

#include <fcntl.h>
#include <unistd.h>

#include <json.hpp>

#include "mft/error.h"

namespace mft {

namespace fs = std::filesystem;

int64_t ShardManifest::total_bytes() const {
    int64_t t = 0;
    for (const auto& s : segments) t += s.bytes;
    return t;
}

int64_t ShardManifest::max_segment_bytes() const {
    int64_t m = 0;
    for (const auto& s : segments) m = std::max(m, s.bytes);
    return m;
}

std::vector<ShardUnit> shard_units(const std::vector<NamedParam>& params) {
    std::vector<ShardUnit> units;
    std::map<std::string, size_t> index;
    for (const auto& p : params) {
        auto it = index.find(p.unit);
        if (it == index.end() || it->second + 1 != units.size()) {
            // A unit that reappears after another one starts a fresh group so order is preserved.
            index[p.unit] = units.size();
            units.push_back({});
        }
        auto& u = units.back();
        u.param_names.push_back(p.name);
        u.bytes += p.tensor.bytes();
    }
    return units;
}

namespace {

Segment make_segment(int32_t id, const std::vector<ShardUnit>& units, size_t begin, size_t end) {
    Segment s;
    s.id = id;
    for (size_t i = begin; i < end; ++i) {
        s.param_names.insert(s.param_names.end(), units[i].param_names.begin(), units[i].param_names.end());
        s.bytes += units[i].bytes;
    }
    return s;
}

// Boundaries of a greedy fill under cap; each returned pair is [begin, end).
std::vector<std::pair<size_t, size_t>> greedy_fill(const std::vector<ShardUnit>& units, int64_t cap) {
    std::vector<std::pair<size_t, size_t>> out;
    size_t begin = 0;
    int64_t acc = 0;
    for (size_t i = 0; i < units.size(); ++i) {
        if (i > begin && acc + units[i].bytes > cap) {
            out.emplace_back(begin, i);
            begin = i;
            acc = 0;
        }
        acc += units[i].bytes;
    }
    if (begin < units.size()) out.emplace_back(begin, units.size());
    return out;
}

int64_t range_bytes(const std::vector<ShardUnit>& units, size_t b, size_t e) {
    int64_t t = 0;
    for (size_t i = b; i < e; ++i) t += units[i].bytes;
    return t;
}

}  // namespace

ShardManifest build_manifest(const std::vector<ShardUnit>& units, const ShardPolicy& policy, bool strict,
                             std::vector<std::string>* warnings) {
    ShardManifest m;
    if (units.empty()) return m;
    std::vector<std::pair<size_t, size_t>> parts;

    if (auto* sc = std::get_if<SegmentCount>(&policy)) {
        if (sc->k < 1) fail(ErrorCode::InvalidConfig, "segment count must be at least 1");
        const size_t k = std::min(static_cast<size_t>(sc->k), units.size());
        int64_t lo = 0, hi = 0;
        for (const auto& u : units) {
            lo = std::max(lo, u.bytes);
            hi += u.bytes;
        }
        while (lo < hi) {
            int64_t mid = lo + (hi - lo) / 2;
            if (greedy_fill(units, mid).size() <= k) hi = mid;
            else lo = mid + 1;
        }
        parts = greedy_fill(units, lo);
        // Split multi-unit parts until there are exactly k; this never raises the maximum.
        while (parts.size() < k) {
            size_t widest = 0;
            for (size_t i = 1; i < parts.size(); ++i) {
                if (parts[i].second - parts[i].first > parts[widest].second - parts[widest].first) widest = i;
            }
            auto [b, e] = parts[widest];
            size_t best = b + 1;
            int64_t best_max = -1;
            for (size_t cut = b + 1; cut < e; ++cut) {
                int64_t mx = std::max(range_bytes(units, b, cut), range_bytes(units, cut, e));
                if (best_max < 0 || mx < best_max) {
                    best_max = mx;
                    best = cut;
                }
            }
            parts[widest] = {b, best};
            parts.insert(parts.begin() + static_cast<std::ptrdiff_t>(widest) + 1, {best, e});
        }
        for (size_t i = 0; i < parts.size(); ++i) {
            m.segments.push_back(make_segment(static_cast<int32_t>(i), units, parts[i].first, parts[i].second));
        }
        m.budget_bytes = m.max_segment_bytes();
        return m;
    }

    const int64_t budget = std::get<ByteBudget>(policy).bytes;
    if (budget <= 0) fail(ErrorCode::InvalidConfig, "byte budget must be positive");
    for (const auto& u : units) {
        if (u.bytes > budget) {
            std::string msg = "parameter group '" + u.param_names.front() + "' (" + std::to_string(u.bytes) +
                              " bytes) exceeds the budget of " + std::to_string(budget) + " bytes";
            if (strict) fail(ErrorCode::BudgetTooSmall, msg);
            if (warnings) warnings->push_back(msg + "; placed in its own segment");
        }
    }
    parts = greedy_fill(units, budget);
    for (size_t i = 0; i < parts.size(); ++i) {
        m.segments.push_back(make_segment(static_cast<int32_t>(i), units, parts[i].first, parts[i].second));
    }
    m.budget_bytes = std::max(budget, m.max_segment_bytes());
    return m;
}

namespace {

void write_file_synced(const fs::path& path, const std::vector<const Buffer*>& buffers) {
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    if (fd < 0) fail(ErrorCode::Io, "cannot open spill file '" + path.string() + "' for writing");
    for (const Buffer* b : buffers) {
        const char* p = reinterpret_cast<const char*>(b->data());
        size_t left = b->size() * sizeof(float);
        while (left > 0) {
            ssize_t n = ::write(fd, p, left);
            if (n <= 0) {
                ::close(fd);
                fail(ErrorCode::Io, "short write to spill file '" + path.string() + "'");
            }
            p += n;
            left -= static_cast<size_t>(n);
        }
    }
    ::fsync(fd);
    ::close(fd);
}

void read_file(const fs::path& path, const std::vector<Buffer*>& buffers) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open spill file '" + path.string() + "'");
    for (Buffer* b : buffers) {
        in.read(reinterpret_cast<char*>(b->data()), static_cast<std::streamsize>(b->size() * sizeof(float)));
        if (!in) fail(ErrorCode::Io, "spill file '" + path.string() + "' is truncated");
    }
}

std::atomic<int> g_manager_serial{0};

}  // namespace

fs::path default_spill_dir() {
    if (const char* env = std::getenv("MFT_SPILL_DIR"); env && *env) return fs::path(env);
    return fs::temp_directory_path() / ("mft_spill_" + std::to_string(::getpid()));
}

ShardManager::ShardManager(ShardManifest manifest, const std::vector<NamedParam>& params, fs::path spill_dir)
    : manifest_(std::move(manifest)) {
    std::map<std::string, const NamedParam*> by_name;
    for (const auto& p : params) by_name[p.name] = &p;
    size_t covered = 0;
    slots_.resize(manifest_.segments.size());
    dirty_.assign(manifest_.segments.size(), true);
    for (auto& seg : manifest_.segments) {
        for (const auto& name : seg.param_names) {
            auto it = by_name.find(name);
            if (it == by_name.end()) fail(ErrorCode::MissingTensor, "manifest names unknown parameter '" + name + "'");
            TensorImpl* impl = it->second->tensor.impl();
            if (impl->residency) fail(ErrorCode::InvalidArgument, "parameter '" + name + "' is already sharded");
            slots_[static_cast<size_t>(seg.id)].push_back({impl, it->second->tensor.shared(), false});
            ++covered;
        }
    }
    if (covered != params.size()) fail(ErrorCode::InvalidConfig, "manifest does not cover every parameter");

    spill_dir_ = std::move(spill_dir) / ("run_" + std::to_string(g_manager_serial.fetch_add(1)));
    std::error_code ec;
    fs::create_directories(spill_dir_, ec);
    if (ec) fail(ErrorCode::Io, "cannot create spill directory '" + spill_dir_.string() + "': " + ec.message());

    for (auto& seg : manifest_.segments) {
        seg.disk_path = spill_dir_ / ("segment_" + std::to_string(seg.id) + ".bin");
        seg.offset = 0;
        seg.state = Residency::InMemory;
        resident_ += seg.bytes;
        for (auto& slot : slots_[static_cast<size_t>(seg.id)]) {
            slot.impl->segment = seg.id;
            slot.impl->residency = this;
        }
    }
    peak_ = resident_;
    for (auto& seg : manifest_.segments) offload_locked(seg);
    peak_ = resident_;
    write_sidecar();
}

ShardManager::~ShardManager() {
    std::lock_guard lock(mu_);
    for (auto& seg : manifest_.segments) {
        try {
            if (seg.state == Residency::OnDisk) load_locked(seg);
        } catch (...) {
        }
        for (auto& slot : slots_[static_cast<size_t>(seg.id)]) {
            slot.impl->residency = nullptr;
            slot.impl->segment = -1;
        }
    }
    std::error_code ec;
    fs::remove_all(spill_dir_, ec);
}

void ShardManager::load_locked(Segment& seg) {
    auto& slots = slots_[static_cast<size_t>(seg.id)];
    std::vector<Buffer*> data, grads;
    for (auto& slot : slots) {
        slot.impl->data.assign(static_cast<size_t>(shape_numel(slot.impl->shape)), 0.0f);
        data.push_back(&slot.impl->data);
        if (slot.has_grad) {
            slot.impl->grad.assign(static_cast<size_t>(shape_numel(slot.impl->shape)), 0.0f);
            grads.push_back(&slot.impl->grad);
        }
    }
    read_file(seg.disk_path, data);
    if (!grads.empty()) {
        fs::path gpath = seg.disk_path;
        gpath.replace_extension(".grad.bin");
        read_file(gpath, grads);
    }
    for (auto& slot : slots) {
        // A parameter frozen while offloaded must not get its old gradient back.
        if (!slot.impl->requires_grad) slot.impl->grad = Buffer();
    }
    seg.state = Residency::InMemory;
    dirty_[static_cast<size_t>(seg.id)] = false;
    resident_ += seg.bytes;
    peak_ = std::max(peak_, resident_);
    ++loads_;
}

void ShardManager::offload_locked(Segment& seg) {
    auto& slots = slots_[static_cast<size_t>(seg.id)];
    std::vector<const Buffer*> data, grads;
    for (auto& slot : slots) {
        data.push_back(&slot.impl->data);
        slot.has_grad = !slot.impl->grad.empty();
        if (slot.has_grad) grads.push_back(&slot.impl->grad);
    }
    fs::path gpath = seg.disk_path;
    gpath.replace_extension(".grad.bin");
    // Parameter bytes are rewritten only when something wrote to them since the last load;
    // gradients change on almost every backward pass, so they are always flushed.
    if (dirty_[static_cast<size_t>(seg.id)]) write_file_synced(seg.disk_path, data);
    if (!grads.empty()) write_file_synced(gpath, grads);
    for (auto& slot : slots) {
        Buffer().swap(slot.impl->data);
        Buffer().swap(slot.impl->grad);
    }
    seg.state = Residency::OnDisk;
    resident_ -= seg.bytes;
    lru_.remove(seg.id);
}

void ShardManager::touch_lru(int32_t id) {
    lru_.remove(id);
    lru_.push_back(id);
}

void ShardManager::acquire(int32_t id) {
    std::lock_guard lock(mu_);
    if (id < 0 || static_cast<size_t>(id) >= manifest_.segments.size()) {
        fail(ErrorCode::IndexOutOfRange, "segment " + std::to_string(id) + " does not exist");
    }
    auto& seg = manifest_.segments[static_cast<size_t>(id)];
    if (seg.state == Residency::InMemory) {
        touch_lru(id);
        return;
    }
    while (resident_ + seg.bytes > manifest_.budget_bytes && !lru_.empty()) {
        offload_locked(manifest_.segments[static_cast<size_t>(lru_.front())]);
    }
    try {
        load_locked(seg);
    } catch (const Error& e) {
        fail(e.code(), "segment " + std::to_string(id) + ": " + e.what());
    }
    touch_lru(id);
}

void ShardManager::release(int32_t id) {
    std::lock_guard lock(mu_);
    if (id < 0 || static_cast<size_t>(id) >= manifest_.segments.size()) {
        fail(ErrorCode::IndexOutOfRange, "segment " + std::to_string(id) + " does not exist");
    }
    auto& seg = manifest_.segments[static_cast<size_t>(id)];
    if (seg.state == Residency::OnDisk) return;
    offload_locked(seg);
}

void ShardManager::require(int32_t segment, bool write) {
    std::lock_guard lock(mu_);
    auto& seg = manifest_.segments[static_cast<size_t>(segment)];
    if (seg.state == Residency::OnDisk || lru_.empty() || lru_.back() != segment) acquire(segment);
    if (write) dirty_[static_cast<size_t>(segment)] = true;
}

Residency ShardManager::state(int32_t id) const {
    std::lock_guard lock(mu_);
    return manifest_.segments.at(static_cast<size_t>(id)).state;
}

ShardManifest ShardManager::manifest() const {
    std::lock_guard lock(mu_);
    return manifest_;
}

int64_t ShardManager::resident_bytes() const {
    std::lock_guard lock(mu_);
    return resident_;
}

int64_t ShardManager::peak_resident_bytes() const {
    std::lock_guard lock(mu_);
    return peak_;
}

void ShardManager::reset_peak() {
    std::lock_guard lock(mu_);
    peak_ = resident_;
}

void ShardManager::write_sidecar() const {
    std::lock_guard lock(mu_);
    nlohmann::json j;
    j["budget_bytes"] = manifest_.budget_bytes;
    auto& segs = j["segments"] = nlohmann::json::array();
    for (const auto& seg : manifest_.segments) {
        nlohmann::json s;
        s["id"] = seg.id;
        s["bytes"] = seg.bytes;
        s["state"] = seg.state == Residency::InMemory ? "InMemory" : "OnDisk";
        s["path"] = seg.disk_path.string();
        auto& names = s["params"] = nlohmann::json::array();
        int64_t off = seg.offset;
        for (const auto& slot : slots_[static_cast<size_t>(seg.id)]) {
            int64_t n = shape_numel(slot.impl->shape) * static_cast<int64_t>(sizeof(float));
            names.push_back({{"begin", off}, {"end", off + n}});
            off += n;
        }
        for (size_t i = 0; i < seg.param_names.size(); ++i) names[i]["name"] = seg.param_names[i];
        segs.push_back(std::move(s));
    }
    std::ofstream out(spill_dir_ / "manifest.json");
    out << j.dump(1) << '\n';
}

bool MemoryProbe::os_resident_available() {
    std::ifstream in("/proc/self/statm");
    return static_cast<bool>(in);
}

int64_t MemoryProbe::read() const {
    if (backend == ProbeBackend::OsResident) {
        std::ifstream in("/proc/self/statm");
        int64_t size = 0, resident = 0;
        if (in >> size >> resident) return resident * static_cast<int64_t>(::sysconf(_SC_PAGESIZE));
    }
    return std::max<int64_t>(0, live_tensor_bytes());
}

int64_t probe_rss(ProbeBackend backend) { return MemoryProbe{backend}.read(); }

}  // namespace mft
