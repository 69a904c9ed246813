#include "chamber/historian.hpp"

#include <algorithm>
#include <fcntl.h>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace chamber::historian {

namespace {

bool ts_less(const TelemetrySample& s, std::int64_t ts) { return s.ts_ms < ts; }

}  // namespace

SampleStore::SampleStore(std::filesystem::path dir) : file_(dir / kFileName) {
    std::filesystem::create_directories(dir);
    std::string bytes;
    {
        std::ifstream in(file_, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        bytes = ss.str();
    }
    std::size_t pos = 0, good_end = 0;
    while (pos < bytes.size()) {
        const auto nl = bytes.find('\n', pos);
        const bool complete = nl != std::string::npos;
        const std::string line = bytes.substr(pos, complete ? nl - pos : std::string::npos);
        const std::size_t next = complete ? nl + 1 : bytes.size();
        try {
            if (!complete) throw std::invalid_argument("unterminated record");
            TelemetrySample s = gateway::sample_from_json(nlohmann::json::parse(line));
            auto& v = index_[s.chamber];
            if (!v.empty() && v.back().ts_ms >= s.ts_ms) {
                throw StoreCorrupt("sample log out of order at byte " + std::to_string(pos));
            }
            v.push_back(std::move(s));
        } catch (const StoreCorrupt&) {
            throw;
        } catch (const std::exception& e) {
            // Only the final record can be torn by a crash; anything earlier is real damage.
            if (next < bytes.size()) {
                throw StoreCorrupt("unreadable sample record at byte " + std::to_string(pos) + ": " + e.what());
            }
            break;
        }
        good_end = next;
        pos = next;
    }
    if (good_end < bytes.size()) {
        truncated_ = bytes.size() - good_end;
        std::filesystem::resize_file(file_, good_end);
    }
    fd_ = ::open(file_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open " + file_.string());
}

SampleStore::~SampleStore() {
    if (fd_ >= 0) ::close(fd_);
}

IngestResult SampleStore::ingest(std::span<const TelemetrySample> batch) {
    IngestResult r;
    std::unique_lock lock(mutex_);
    std::string out;
    std::vector<std::string> touched;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        if (!gateway::valid_chamber(s.chamber)) {
            r.rejected.emplace_back(i, "chamber: expected one of A, B, C, D");
            continue;
        }
        auto& v = index_[s.chamber];
        if (!v.empty() && s.ts_ms <= v.back().ts_ms) {
            const auto it = std::lower_bound(v.begin(), v.end(), s.ts_ms, ts_less);
            if (it != v.end() && it->ts_ms == s.ts_ms) {
                ++r.duplicates;
            } else {
                r.rejected.emplace_back(i, "ts: older than the latest stored sample for chamber " + s.chamber);
            }
            continue;
        }
        out += gateway::canonical_json(s);
        out += '\n';
        v.push_back(s);
        touched.push_back(s.chamber);
        r.accepted_index.push_back(i);
        ++r.accepted;
    }
    if (out.empty()) return r;
    std::size_t written = 0;
    while (written < out.size()) {
        const ssize_t n = ::write(fd_, out.data() + written, out.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            break;
        }
        written += static_cast<std::size_t>(n);
    }
    if (written != out.size() || ::fsync(fd_) != 0) {
        for (auto it = touched.rbegin(); it != touched.rend(); ++it) index_[*it].pop_back();
        throw std::runtime_error("sample log write failed");
    }
    return r;
}

std::vector<TelemetrySample> SampleStore::range(const std::string& chamber, std::int64_t from_ms, std::int64_t to_ms) const {
    std::shared_lock lock(mutex_);
    const auto it = index_.find(chamber);
    if (it == index_.end()) return {};
    const auto& v = it->second;
    const auto lo = std::lower_bound(v.begin(), v.end(), from_ms, ts_less);
    const auto hi = std::lower_bound(lo, v.end(), to_ms, ts_less);
    return {lo, hi};
}

std::vector<TelemetrySample> SampleStore::query(const std::string& chamber, std::int64_t from_ms, std::int64_t to_ms,
                                                std::int64_t interval_ms) const {
    if (interval_ms <= 0) throw std::invalid_argument("interval must be positive");
    if (to_ms <= from_ms) return {};
    std::shared_lock lock(mutex_);
    const auto it = index_.find(chamber);
    if (it == index_.end()) return {};
    const auto& v = it->second;
    std::vector<TelemetrySample> rows;
    const std::int64_t n = (to_ms - from_ms) / interval_ms;
    for (std::int64_t k = 0; k < n; ++k) {
        const std::int64_t boundary = from_ms + k * interval_ms;
        const auto s = std::lower_bound(v.begin(), v.end(), boundary, ts_less);
        if (s != v.end() && s->ts_ms < boundary + interval_ms) rows.push_back(*s);
    }
    return rows;
}

std::optional<TelemetrySample> SampleStore::latest(const std::string& chamber) const {
    std::shared_lock lock(mutex_);
    const auto it = index_.find(chamber);
    if (it == index_.end() || it->second.empty()) return std::nullopt;
    return it->second.back();
}

std::size_t SampleStore::size() const {
    std::shared_lock lock(mutex_);
    std::size_t n = 0;
    for (const auto& [c, v] : index_) n += v.size();
    return n;
}

std::size_t SampleStore::size(const std::string& chamber) const {
    std::shared_lock lock(mutex_);
    const auto it = index_.find(chamber);
    return it == index_.end() ? 0 : it->second.size();
}

}  // namespace chamber::historian
