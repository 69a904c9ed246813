#include "chamber/supervisory.hpp"

#include "chamber/timefmt.hpp"

#include <charconv>
#include <fcntl.h>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace chamber::supervisory {

namespace af = audit_format;

namespace {

// Fixed width: '|' and control bytes become '?', overlong values end in '~'.
std::string field(const std::string& v, std::size_t width) {
    std::string out;
    out.reserve(width);
    for (char c : v) {
        const auto u = static_cast<unsigned char>(c);
        out += (c == '|' || u < 0x20 || u == 0x7F) ? '?' : c;
    }
    if (out.size() > width) {
        out.resize(width);
        out.back() = '~';
    }
    out.resize(width, ' ');
    return out;
}

std::string trim(std::string_view s) {
    const auto end = s.find_last_not_of(' ');
    return end == std::string_view::npos ? std::string() : std::string(s.substr(0, end + 1));
}

std::string read_all(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path head_path(const std::filesystem::path& log) { return log.string() + ".head"; }

std::optional<std::pair<std::uint64_t, std::string>> read_head(const std::filesystem::path& log) {
    std::ifstream in(head_path(log));
    std::uint64_t seq;
    std::string hash;
    if (!(in >> seq >> hash)) return std::nullopt;
    return std::pair{seq, hash};
}

std::vector<std::string_view> split_lines(std::string_view bytes) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < bytes.size()) {
        const auto nl = bytes.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.push_back(bytes.substr(start));  // unterminated tail
            break;
        }
        lines.push_back(bytes.substr(start, nl - start + 1));
        start = nl + 1;
    }
    return lines;
}

}  // namespace

std::string canonical_record(std::uint64_t seq, const AuditEntry& e) {
    char seqbuf[16];
    std::snprintf(seqbuf, sizeof seqbuf, "%010llu", static_cast<unsigned long long>(seq));
    std::string out;
    out.reserve(af::kLine);
    out += seqbuf;
    out += '|';
    out += field(format_iso_ms(e.ts_ms), af::kTs);
    out += '|';
    out += field(e.username, af::kUser);
    out += '|';
    out += field(e.role, af::kRole);
    out += '|';
    out += field(e.action, af::kAction);
    out += '|';
    out += field(e.target, af::kTarget);
    out += '|';
    out += field(e.old_value, af::kValue);
    out += '|';
    out += field(e.new_value, af::kValue);
    return out;
}

std::string record_hash(const std::string& prev_hash, const std::string& canonical) {
    return sha256_hex(prev_hash + canonical);
}

std::string format_line(const AuditRecord& r) {
    return canonical_record(r.seq, r.entry) + '|' + r.prev_hash + '|' + r.hash + '\n';
}

AuditRecord parse_line(const std::string& line) {
    if (line.size() != af::kLine || line.back() != '\n') throw std::invalid_argument("audit line has wrong length");
    const std::size_t widths[] = {af::kSeq, af::kTs, af::kUser, af::kRole, af::kAction, af::kTarget,
                                  af::kValue, af::kValue, af::kHash, af::kHash};
    std::vector<std::string_view> f;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < std::size(widths); ++i) {
        f.push_back(std::string_view(line).substr(pos, widths[i]));
        pos += widths[i];
        const char sep = i + 1 < std::size(widths) ? '|' : '\n';
        if (line[pos] != sep) throw std::invalid_argument("audit line separator missing");
        ++pos;
    }
    AuditRecord r;
    const auto res = std::from_chars(f[0].data(), f[0].data() + f[0].size(), r.seq);
    if (res.ec != std::errc{} || res.ptr != f[0].data() + f[0].size()) throw std::invalid_argument("bad audit seq");
    r.entry.ts_ms = parse_iso_ms(trim(f[1]));
    r.entry.username = trim(f[2]);
    r.entry.role = trim(f[3]);
    r.entry.action = trim(f[4]);
    r.entry.target = trim(f[5]);
    r.entry.old_value = trim(f[6]);
    r.entry.new_value = trim(f[7]);
    r.prev_hash = std::string(f[8]);
    r.hash = std::string(f[9]);
    return r;
}

VerifyResult verify_chain(std::string_view bytes, std::optional<std::pair<std::uint64_t, std::string>> head) {
    VerifyResult v;
    std::string prev = kGenesisHash;
    std::vector<std::string> hashes;
    std::uint64_t expected = 1;
    auto fail = [&](std::uint64_t seq, std::string why) {
        v.ok = false;
        v.first_bad_seq = seq;
        v.reason = std::move(why);
        return v;
    };
    for (const auto line : split_lines(bytes)) {
        AuditRecord r;
        try {
            r = parse_line(std::string(line));
        } catch (const std::exception& e) {
            return fail(expected, std::string("unparsable record: ") + e.what());
        }
        if (r.seq != expected) {
            return fail(expected, "expected seq " + std::to_string(expected) + ", found " + std::to_string(r.seq));
        }
        if (r.prev_hash != prev) return fail(expected, "prev_hash does not link to the previous record");
        const std::string canonical(line.substr(0, af::kLine - 2 * af::kHash - 3));
        if (record_hash(prev, canonical) != r.hash) return fail(expected, "record hash mismatch");
        prev = r.hash;
        hashes.push_back(r.hash);
        ++v.records;
        ++expected;
    }
    if (head) {
        const auto [hseq, hhash] = *head;
        if (hseq > v.records) return fail(v.records + 1, "chain ends before recorded head seq " + std::to_string(hseq));
        if (hseq > 0 && hashes[hseq - 1] != hhash) return fail(hseq, "record does not match recorded head hash");
    }
    return v;
}

VerifyResult verify_file(const std::filesystem::path& log) {
    if (!std::filesystem::exists(log)) throw std::runtime_error("audit log not found: " + log.string());
    return verify_chain(read_all(log), read_head(log));
}

AuditLog::AuditLog(std::filesystem::path file) : file_(std::move(file)) {
    if (!std::filesystem::exists(file_)) {
        if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
        std::ofstream(file_, std::ios::app);
        return;
    }
    std::string bytes = read_all(file_);
    if (!bytes.empty() && bytes.back() != '\n') {
        // A write torn by a crash was never acknowledged; drop it.
        bytes.resize(bytes.rfind('\n') == std::string::npos ? 0 : bytes.rfind('\n') + 1);
        std::filesystem::resize_file(file_, bytes.size());
    }
    if (bytes.size() >= af::kLine) {
        const auto last = parse_line(bytes.substr(bytes.size() - af::kLine));
        last_seq_ = last.seq;
        last_hash_ = last.hash;
    }
}

AuditRecord AuditLog::append(const AuditEntry& entry) {
    std::lock_guard lock(mutex_);
    AuditRecord r;
    r.seq = last_seq_ + 1;
    r.entry = entry;
    r.prev_hash = last_hash_;
    r.hash = record_hash(r.prev_hash, canonical_record(r.seq, entry));
    const std::string line = format_line(r);

    const int fd = ::open(file_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) throw std::runtime_error("cannot open audit log " + file_.string());
    const bool ok = ::write(fd, line.data(), line.size()) == static_cast<ssize_t>(line.size()) && ::fsync(fd) == 0;
    ::close(fd);
    if (!ok) throw std::runtime_error("audit append failed");

    const auto tmp = head_path(file_).string() + ".tmp";
    {
        std::ofstream h(tmp, std::ios::trunc);
        h << r.seq << ' ' << r.hash << '\n';
    }
    std::filesystem::rename(tmp, head_path(file_));
    last_seq_ = r.seq;
    last_hash_ = r.hash;
    return r;
}

std::vector<AuditRecord> AuditLog::records(std::int64_t from_ms, std::int64_t to_ms) const {
    std::lock_guard lock(mutex_);
    std::vector<AuditRecord> out;
    const std::string bytes = read_all(file_);
    for (const auto line : split_lines(bytes)) {
        auto r = parse_line(std::string(line));
        if (r.entry.ts_ms >= from_ms && r.entry.ts_ms < to_ms) out.push_back(std::move(r));
    }
    return out;
}

std::uint64_t AuditLog::size() const {
    std::lock_guard lock(mutex_);
    return last_seq_;
}

}  // namespace chamber::supervisory
