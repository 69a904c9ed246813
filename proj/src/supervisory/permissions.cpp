#include "chamber/supervisory.hpp"

namespace chamber::supervisory {

std::string to_string(Role r) {
    switch (r) {
        case Role::operator_: return "Operator";
        case Role::supervisor: return "Supervisor";
        case Role::administrator: return "Administrator";
        case Role::service: return "Service";
    }
    return "?";
}

Role parse_role(const std::string& s) {
    for (Role r : kAllRoles) {
        if (to_string(r) == s) return r;
    }
    throw std::invalid_argument("unknown role '" + s + "'");
}

std::string to_string(Action a) {
    switch (a) {
        case Action::read: return "read";
        case Action::write_setpoint: return "write_setpoint";
        case Action::ack_alarm: return "ack_alarm";
        case Action::manage_users: return "manage_users";
        case Action::write_gains: return "write_gains";
        case Action::trigger_tuning: return "trigger_tuning";
        case Action::ingest: return "ingest";
    }
    return "?";
}

bool allowed(Role role, Action action) {
    switch (role) {
        case Role::operator_:
            return action == Action::read;
        case Role::supervisor:
            return action == Action::read || action == Action::write_setpoint || action == Action::ack_alarm;
        case Role::administrator:
            return action != Action::ingest;
        case Role::service:
            return action == Action::read || action == Action::ingest;
    }
    return false;
}

}  // namespace chamber::supervisory
