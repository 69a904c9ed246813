#pragma once

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace chamber::supervisory {

// ---- crypto ---------------------------------------------------------------

std::string sha256_hex(std::string_view data);
std::string pbkdf2_sha256_hex(const std::string& password, const std::string& salt_hex, int iterations);
std::string random_hex(std::size_t bytes);
/// Constant-time comparison for equal-length secrets.
bool secure_equal(const std::string& a, const std::string& b);

// ---- roles and permissions ------------------------------------------------

enum class Role { operator_, supervisor, administrator, service };

std::string to_string(Role r);
Role parse_role(const std::string& s);

enum class Action {
    read,
    write_setpoint,
    ack_alarm,
    manage_users,
    write_gains,
    trigger_tuning,
    ingest,
};

inline constexpr std::array kAllRoles{Role::operator_, Role::supervisor, Role::administrator, Role::service};
inline constexpr std::array kAllActions{Action::read,        Action::write_setpoint, Action::ack_alarm, Action::manage_users,
                                        Action::write_gains, Action::trigger_tuning, Action::ingest};

std::string to_string(Action a);
bool allowed(Role role, Action action);

class AuthError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Forbidden : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- users and sessions ---------------------------------------------------

struct UserAccount {
    std::string username;
    Role role = Role::operator_;
    bool active = true;
    std::string salt;
    std::string hash;
    int iterations = 0;
};

class UserError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The change would leave no active Administrator.
class LastAdminError : public UserError {
public:
    using UserError::UserError;
};

/// Accounts with salted PBKDF2 hashes. Persists to a JSON file when a path is given.
class UserStore {
public:
    static constexpr int kIterations = 60'000;

    explicit UserStore(std::filesystem::path file = {}, int iterations = kIterations);

    void add(const std::string& username, const std::string& password, Role role);
    void set_role(const std::string& username, Role role);
    void set_active(const std::string& username, bool active);
    void remove(const std::string& username);

    std::optional<UserAccount> find(const std::string& username) const;
    std::vector<UserAccount> list() const;
    /// Returns the account when the password matches an active user.
    std::optional<UserAccount> authenticate(const std::string& username, const std::string& password) const;
    std::size_t active_admins() const;

private:
    void check_admin_remains(const std::string& username, Role new_role, bool new_active) const;
    void save() const;

    std::filesystem::path file_;
    int iterations_;
    mutable std::mutex mutex_;
    std::map<std::string, UserAccount> users_;
};

struct Session {
    std::string token;
    std::string username;
    Role role = Role::operator_;
    std::int64_t expires_ms = 0;
};

class SessionTable {
public:
    static constexpr std::int64_t kLifetimeMs = 12LL * 3600 * 1000;

    Session issue(const std::string& username, Role role, std::int64_t now_ms);
    /// Long-lived credential for machine clients (the gateway's ingest path).
    void add_static(const std::string& token, const std::string& username, Role role);
    std::optional<Session> lookup(const std::string& token, std::int64_t now_ms) const;
    void revoke_user(const std::string& username);

private:
    mutable std::mutex mutex_;
    std::map<std::string, Session> sessions_;
};

// ---- audit trail ----------------------------------------------------------

struct AuditEntry {
    std::int64_t ts_ms = 0;
    std::string username;
    std::string role;
    std::string action;
    std::string target;
    std::string old_value;
    std::string new_value;
};

struct AuditRecord {
    std::uint64_t seq = 0;
    AuditEntry entry;
    std::string prev_hash;
    std::string hash;
};

namespace audit_format {
inline constexpr std::size_t kSeq = 10;
inline constexpr std::size_t kTs = 24;
inline constexpr std::size_t kUser = 32;
inline constexpr std::size_t kRole = 13;
inline constexpr std::size_t kAction = 24;
inline constexpr std::size_t kTarget = 40;
inline constexpr std::size_t kValue = 64;
inline constexpr std::size_t kHash = 64;
/// Including separators and the trailing newline.
inline constexpr std::size_t kLine = kSeq + kTs + kUser + kRole + kAction + kTarget + 2 * kValue + 2 * kHash + 9 + 1;
}  // namespace audit_format

inline const std::string kGenesisHash(64, '0');

/// The fixed-width bytes that are hashed (seq through new value, no trailing separator).
std::string canonical_record(std::uint64_t seq, const AuditEntry& e);
std::string record_hash(const std::string& prev_hash, const std::string& canonical);
std::string format_line(const AuditRecord& r);
AuditRecord parse_line(const std::string& line);

struct VerifyResult {
    bool ok = true;
    std::uint64_t records = 0;
    std::optional<std::uint64_t> first_bad_seq;
    std::string reason;
};

/// Walks the chain from genesis. The first position whose record is missing, out of order,
/// unparsable or mis-hashed is reported as first_bad_seq. `head` (seq, hash) catches tail truncation.
VerifyResult verify_chain(std::string_view log_bytes,
                          std::optional<std::pair<std::uint64_t, std::string>> head = std::nullopt);
VerifyResult verify_file(const std::filesystem::path& log);

/// Append-only, fsynced, single writer. A sidecar "<log>.head" records the latest seq and hash.
class AuditLog {
public:
    explicit AuditLog(std::filesystem::path file);

    AuditRecord append(const AuditEntry& entry);
    std::vector<AuditRecord> records(std::int64_t from_ms = INT64_MIN, std::int64_t to_ms = INT64_MAX) const;
    std::uint64_t size() const;
    const std::filesystem::path& path() const { return file_; }

private:
    std::filesystem::path file_;
    mutable std::mutex mutex_;
    std::uint64_t last_seq_ = 0;
    std::string last_hash_ = kGenesisHash;
};

// ---- alarms ---------------------------------------------------------------

enum class AlarmKind { deviation_t, deviation_rh, blower_fail, sensor_fail, tuning_fail, unit_failover };
enum class AlarmState { active, acked, cleared };

std::string to_string(AlarmKind k);
std::string to_string(AlarmState s);
AlarmKind parse_alarm_kind(const std::string& s);
AlarmState parse_alarm_state(const std::string& s);
bool legal_transition(AlarmState from, AlarmState to);
/// Bit in the register alarm word for each kind.
std::uint16_t alarm_word_bit(AlarmKind k);

struct AlarmRecord {
    std::uint64_t id = 0;
    AlarmKind kind = AlarmKind::deviation_t;
    std::string chamber;
    std::int64_t raised_ms = 0;
    AlarmState state = AlarmState::active;
    std::optional<std::string> acked_by;
    std::optional<std::int64_t> acked_ms;
    std::optional<std::int64_t> cleared_ms;
    std::string detail;
};

nlohmann::json to_json(const AlarmRecord& a);

struct AlarmTransition {
    AlarmRecord record;
    std::optional<AlarmState> from;
    AlarmState to;
};

class IllegalTransition : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class AlarmManager {
public:
    using Listener = std::function<void(const AlarmTransition&)>;

    void add_listener(Listener l);

    /// Opens an ACTIVE alarm unless one of the same kind is already open for the chamber.
    std::optional<AlarmRecord> raise(AlarmKind kind, const std::string& chamber, std::int64_t ts_ms, std::string detail);
    std::optional<AlarmRecord> clear(AlarmKind kind, const std::string& chamber, std::int64_t ts_ms);
    /// Supervisor or Administrator only; ACTIVE -> ACKED.
    AlarmRecord ack(std::uint64_t id, const std::string& user, Role role, std::int64_t ts_ms);

    std::optional<AlarmRecord> get(std::uint64_t id) const;
    std::optional<AlarmRecord> open(AlarmKind kind, const std::string& chamber) const;
    std::vector<AlarmRecord> list(std::optional<AlarmState> state = std::nullopt) const;
    std::uint16_t alarm_word(const std::string& chamber) const;
    std::size_t count(AlarmKind kind, const std::string& chamber) const;

private:
    void emit(const AlarmTransition& t);

    mutable std::mutex mutex_;
    std::vector<AlarmRecord> alarms_;
    std::vector<Listener> listeners_;
};

struct AlarmConfig {
    double tol_t = 2.0;
    double tol_rh = 5.0;
    double deviation_dwell_s = 300.0;
    double blower_threshold_inwc = 0.1;
    double blower_dwell_s = 10.0;
    double frozen_s = 60.0;
};

struct AlarmInputs {
    std::int64_t ts_ms = 0;
    double sp_t = 0.0;
    double sp_rh = 0.0;
    std::array<double, 7> t{};
    std::array<double, 7> rh{};
    std::array<bool, 7> bad{};
    double pressure_inwc = 0.0;
    bool blower_commanded = true;
};

/// Per-chamber condition tracking feeding an AlarmManager.
class AlarmEvaluator {
public:
    AlarmEvaluator(std::string chamber, AlarmConfig config = {});
    void evaluate(const AlarmInputs& in, AlarmManager& alarms);
    bool deviation_armed() const { return armed_t_ && armed_rh_; }

private:
    struct Dwell {
        std::optional<std::int64_t> out_since;
        std::optional<std::int64_t> in_since;
    };
    void deviation(AlarmKind kind, bool armed, bool out, std::int64_t ts, Dwell& d, AlarmManager& alarms,
                   const std::string& detail);

    std::string chamber_;
    AlarmConfig cfg_;
    bool armed_t_ = false;
    bool armed_rh_ = false;
    Dwell dev_t_, dev_rh_;
    std::optional<std::int64_t> low_pressure_since_;
    std::array<double, 7> last_t_{}, last_rh_{};
    std::array<std::int64_t, 7> changed_at_{};
    bool primed_ = false;
};

// ---- notifications --------------------------------------------------------

/// Writes one email-shaped NDJSON record per ACTIVE and per CLEARED transition.
class Notifier {
public:
    Notifier(std::filesystem::path outbox, std::string recipient = "qa-alerts@stability.local");
    void on_transition(const AlarmTransition& t);
    std::uint64_t written() const { return written_; }
    std::uint64_t failures() const { return failures_; }

private:
    std::filesystem::path outbox_;
    std::string recipient_;
    std::mutex mutex_;
    std::uint64_t written_ = 0;
    std::uint64_t failures_ = 0;
};

}  // namespace chamber::supervisory
