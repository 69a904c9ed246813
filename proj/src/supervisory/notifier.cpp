#include "chamber/supervisory.hpp"

#include "chamber/timefmt.hpp"

#include <fstream>
#include <iostream>

namespace chamber::supervisory {

Notifier::Notifier(std::filesystem::path outbox, std::string recipient)
    : outbox_(std::move(outbox)), recipient_(std::move(recipient)) {}

void Notifier::on_transition(const AlarmTransition& t) {
    if (t.to == AlarmState::acked) return;
    const AlarmRecord& a = t.record;
    const std::string state = to_string(t.to);
    const std::int64_t when = t.to == AlarmState::cleared ? a.cleared_ms.value_or(a.raised_ms) : a.raised_ms;
    nlohmann::json mail{
        {"to", recipient_},
        {"subject", "[" + state + "] chamber " + a.chamber + " " + to_string(a.kind)},
        {"body", "Alarm " + std::to_string(a.id) + " (" + to_string(a.kind) + ") in chamber " + a.chamber + " is " +
                     state + " at " + format_iso_ms(when) + ". " + a.detail},
        {"alarm_id", a.id},
        {"chamber", a.chamber},
        {"kind", to_string(a.kind)},
        {"state", state},
        {"ts", format_iso_ms(when)},
    };
    std::lock_guard lock(mutex_);
    std::ofstream out(outbox_, std::ios::app);
    out << mail.dump() << '\n';
    out.flush();
    if (!out) {
        ++failures_;
        std::cerr << "notifier: cannot write outbox " << outbox_ << '\n';
        return;
    }
    ++written_;
}

}  // namespace chamber::supervisory
