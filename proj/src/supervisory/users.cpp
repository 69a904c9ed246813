#include "chamber/supervisory.hpp"

#include <fstream>

namespace chamber::supervisory {

namespace {

void validate_username(const std::string& u) {
    if (u.empty() || u.size() > audit_format::kUser) throw UserError("username must be 1..32 characters");
    for (char c : u) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) {
            throw UserError("username may contain letters, digits, '_', '-', '.' only");
        }
    }
}

}  // namespace

UserStore::UserStore(std::filesystem::path file, int iterations) : file_(std::move(file)), iterations_(iterations) {
    if (file_.empty() || !std::filesystem::exists(file_)) return;
    std::ifstream in(file_);
    const auto doc = nlohmann::json::parse(in);
    for (const auto& u : doc.at("users")) {
        UserAccount a;
        a.username = u.at("username").get<std::string>();
        a.role = parse_role(u.at("role").get<std::string>());
        a.active = u.at("active").get<bool>();
        a.salt = u.at("salt").get<std::string>();
        a.hash = u.at("hash").get<std::string>();
        a.iterations = u.at("iterations").get<int>();
        users_[a.username] = a;
    }
}

void UserStore::save() const {
    if (file_.empty()) return;
    nlohmann::json users = nlohmann::json::array();
    for (const auto& [name, a] : users_) {
        users.push_back({{"username", a.username}, {"role", to_string(a.role)}, {"active", a.active},
                         {"salt", a.salt}, {"hash", a.hash}, {"iterations", a.iterations}});
    }
    const auto tmp = file_.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << nlohmann::json{{"users", users}}.dump(2) << '\n';
        if (!out) throw std::runtime_error("cannot write " + tmp);
    }
    std::filesystem::rename(tmp, file_);
}

void UserStore::add(const std::string& username, const std::string& password, Role role) {
    validate_username(username);
    if (role == Role::service) throw UserError("service identities are not user accounts");
    if (password.size() < 8) throw UserError("password must be at least 8 characters");
    std::lock_guard lock(mutex_);
    if (users_.count(username)) throw UserError("user '" + username + "' already exists");
    UserAccount a;
    a.username = username;
    a.role = role;
    a.salt = random_hex(16);
    a.iterations = iterations_;
    a.hash = pbkdf2_sha256_hex(password, a.salt, a.iterations);
    users_[username] = a;
    save();
}

void UserStore::check_admin_remains(const std::string& username, Role new_role, bool new_active) const {
    std::size_t admins = 0;
    for (const auto& [name, a] : users_) {
        const Role r = name == username ? new_role : a.role;
        const bool act = name == username ? new_active : a.active;
        if (r == Role::administrator && act) ++admins;
    }
    if (admins == 0) throw LastAdminError("at least one active Administrator must remain");
}

void UserStore::set_role(const std::string& username, Role role) {
    if (role == Role::service) throw UserError("service identities are not user accounts");
    std::lock_guard lock(mutex_);
    auto it = users_.find(username);
    if (it == users_.end()) throw UserError("no such user '" + username + "'");
    check_admin_remains(username, role, it->second.active);
    it->second.role = role;
    save();
}

void UserStore::set_active(const std::string& username, bool active) {
    std::lock_guard lock(mutex_);
    auto it = users_.find(username);
    if (it == users_.end()) throw UserError("no such user '" + username + "'");
    check_admin_remains(username, it->second.role, active);
    it->second.active = active;
    save();
}

void UserStore::remove(const std::string& username) {
    std::lock_guard lock(mutex_);
    auto it = users_.find(username);
    if (it == users_.end()) throw UserError("no such user '" + username + "'");
    check_admin_remains(username, Role::operator_, false);
    users_.erase(it);
    save();
}

std::optional<UserAccount> UserStore::find(const std::string& username) const {
    std::lock_guard lock(mutex_);
    auto it = users_.find(username);
    if (it == users_.end()) return std::nullopt;
    return it->second;
}

std::vector<UserAccount> UserStore::list() const {
    std::lock_guard lock(mutex_);
    std::vector<UserAccount> out;
    for (const auto& [n, a] : users_) out.push_back(a);
    return out;
}

std::optional<UserAccount> UserStore::authenticate(const std::string& username, const std::string& password) const {
    const auto a = find(username);
    if (!a || !a->active) return std::nullopt;
    if (!secure_equal(pbkdf2_sha256_hex(password, a->salt, a->iterations), a->hash)) return std::nullopt;
    return a;
}

std::size_t UserStore::active_admins() const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& [name, a] : users_) n += a.role == Role::administrator && a.active;
    return n;
}

Session SessionTable::issue(const std::string& username, Role role, std::int64_t now_ms) {
    Session s{random_hex(32), username, role, now_ms + kLifetimeMs};
    std::lock_guard lock(mutex_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        it = it->second.expires_ms <= now_ms ? sessions_.erase(it) : std::next(it);
    }
    sessions_[s.token] = s;
    return s;
}

void SessionTable::add_static(const std::string& token, const std::string& username, Role role) {
    std::lock_guard lock(mutex_);
    sessions_[token] = {token, username, role, INT64_MAX};
}

std::optional<Session> SessionTable::lookup(const std::string& token, std::int64_t now_ms) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(token);
    if (it == sessions_.end() || it->second.expires_ms <= now_ms) return std::nullopt;
    return it->second;
}

void SessionTable::revoke_user(const std::string& username) {
    std::lock_guard lock(mutex_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        it = it->second.username == username ? sessions_.erase(it) : std::next(it);
    }
}

}  // namespace chamber::supervisory
