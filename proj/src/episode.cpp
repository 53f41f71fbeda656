#include <set>

#include "fsad/data.hpp"

namespace fsad {

std::size_t TrainPool::size() const {
    std::size_t n = 0;
    for (const auto& c : categories) n += c.images.size();
    return n;
}

bool TrainPool::contains_category(const std::string& name) const {
    for (const auto& c : categories)
        if (c.name == name) return true;
    return false;
}

ImageTensor TrainPool::load(const std::string& rel) const {
    if (cache) return *cache->get(root / rel);
    return load_image(root / rel, PreprocessConfig{});
}

Episode build_episode(const DatasetIndex& index, const EpisodeSpec& spec, const PreprocessConfig& cfg, std::shared_ptr<ImageCache> cache) {
    if (spec.shots <= 0) fail(ErrorKind::InvalidSpec, "shots must be positive");
    const CategoryIndex& target = index.category(spec.target_category);
    if (static_cast<std::size_t>(spec.shots) > target.train_normals.size()) {
        fail(ErrorKind::InvalidSpec, "category '" + target.name + "' has " + std::to_string(target.train_normals.size()) + " normal images, " +
                                         std::to_string(spec.shots) + " shots requested");
    }
    if (!cache) cache = std::make_shared<ImageCache>(cfg);

    Episode ep;
    ep.target_category = target.name;
    Rng rng = Rng(spec.seed).split("support");
    for (std::size_t i : rng.choose(target.train_normals.size(), static_cast<std::size_t>(spec.shots))) {
        const std::string& id = target.train_normals[i];
        ep.support_ids.push_back(id);
        ep.support.push_back(*cache->get(index.root / id));
    }

    ep.train_pool.root = index.root;
    ep.train_pool.cache = cache;
    for (const auto& c : index.categories) {
        if (c.name == target.name) continue;
        ep.train_pool.categories.push_back({c.name, c.train_normals});
    }

    const std::set<std::string> support(ep.support_ids.begin(), ep.support_ids.end());
    for (const auto& t : target.test_items) {
        if (support.count(t.image)) continue;  // never score a support image as a test item
        EpisodeTestItem item;
        item.id = t.image;
        item.label = t.label;
        item.image = *cache->get(index.root / t.image);
        if (t.mask) item.mask = load_mask(index.root / *t.mask, cfg.resolution);
        ep.test.push_back(std::move(item));
    }
    return ep;
}

ImagePair sample_pair(const TrainPool& pool, Rng& rng) {
    if (pool.categories.empty()) fail(ErrorKind::InsufficientData, "training pool is empty");
    const auto& cat = pool.categories[rng.below(pool.categories.size())];
    if (cat.images.size() < 2) fail(ErrorKind::InsufficientData, "category '" + cat.name + "' has fewer than 2 training images");
    const auto idx = rng.choose(cat.images.size(), 2);
    ImagePair p;
    p.category = cat.name;
    p.id0 = cat.images[idx[0]];
    p.id1 = cat.images[idx[1]];
    p.i0 = pool.load(p.id0);
    p.i1 = pool.load(p.id1);
    return p;
}

}  // namespace fsad
