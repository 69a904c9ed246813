#include "chamber/regmap.hpp"

#include <algorithm>

namespace chamber::regmap {

RegisterImage::RegisterImage(int blocks) {
    if (blocks < 1 || blocks > 255) throw std::invalid_argument("block count must be 1..255");
    blocks_.assign(static_cast<std::size_t>(blocks), Block{});
}

void RegisterImage::check(int db, std::size_t offset, std::size_t length) const {
    if (db < 1 || db > block_count()) throw RegmapError(ErrorCode::bounds, "no such data block");
    if (offset + length > kBlockSize) throw RegmapError(ErrorCode::bounds, "range past end of block");
}

std::vector<std::uint8_t> RegisterImage::read(int db, std::size_t offset, std::size_t length) const {
    check(db, offset, length);
    std::shared_lock lock(mutex_);
    const Block& b = blocks_[static_cast<std::size_t>(db - 1)];
    return {b.begin() + static_cast<std::ptrdiff_t>(offset), b.begin() + static_cast<std::ptrdiff_t>(offset + length)};
}

Block RegisterImage::snapshot(int db) const {
    check(db, 0, 0);
    std::shared_lock lock(mutex_);
    return blocks_[static_cast<std::size_t>(db - 1)];
}

void RegisterImage::external_write(int db, std::size_t offset, std::span<const std::uint8_t> data) {
    check(db, offset, data.size());
    if (!externally_writable(offset, data.size())) throw RegmapError(ErrorCode::read_only, "region is read-only");
    std::unique_lock lock(mutex_);
    std::copy(data.begin(), data.end(), blocks_[static_cast<std::size_t>(db - 1)].begin() + static_cast<std::ptrdiff_t>(offset));
    pending_.push_back({db, offset, {data.begin(), data.end()}});
}

void RegisterImage::update(int db, const std::function<void(std::span<const WriteCommand>, Block&)>& fn) {
    check(db, 0, 0);
    std::unique_lock lock(mutex_);
    std::vector<WriteCommand> mine;
    auto split = std::stable_partition(pending_.begin(), pending_.end(), [db](const WriteCommand& w) { return w.db != db; });
    std::move(split, pending_.end(), std::back_inserter(mine));
    pending_.erase(split, pending_.end());
    fn(mine, blocks_[static_cast<std::size_t>(db - 1)]);
}

void RegisterImage::write_internal(int db, std::size_t offset, std::span<const std::uint8_t> data) {
    check(db, offset, data.size());
    std::unique_lock lock(mutex_);
    std::copy(data.begin(), data.end(), blocks_[static_cast<std::size_t>(db - 1)].begin() + static_cast<std::ptrdiff_t>(offset));
}

}  // namespace chamber::regmap
