//! Seeded synthetic retail catalog.
//!
//! Titles follow `<brand> <item name> <attributes>` with gold BIO tags by
//! construction. Descriptions are 2–4 sentences; one of them repeats the item
//! name verbatim and the rest are drawn from category-specific and generic
//! filler, so titles and descriptions of the same item share vocabulary.
//! Item `i` depends only on `(seed, i)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{CatalogItem, TagScheme};
use crate::error::{Error, Result};
use crate::seed;

struct Category {
    nouns: &'static [&'static str],
    modifiers: &'static [&'static str],
    uses: &'static [&'static str],
    filler: &'static [&'static str],
}

const CATEGORIES: &[Category] = &[
    Category {
        nouns: &[
            "mug",
            "kettle",
            "skillet",
            "blender",
            "toaster",
            "teapot",
            "saucepan",
            "cutting board",
            "spatula",
        ],
        modifiers: &["coffee", "tea", "electric", "nonstick", "travel"],
        uses: &["busy mornings", "weekend brunch", "everyday cooking", "hosting friends"],
        filler: &[
            "Safe for the dishwasher and the microwave.",
            "Heats quickly and evenly on any stovetop.",
            "The handle stays cool to the touch.",
            "Pairs well with the rest of your kitchen set.",
        ],
    },
    Category {
        nouns: &[
            "tent",
            "backpack",
            "lantern",
            "hammock",
            "cooler",
            "sleeping bag",
            "water bottle",
            "camp chair",
        ],
        modifiers: &["hiking", "camping", "insulated", "folding", "ultralight"],
        uses: &[
            "long trails",
            "weekend camping trips",
            "summer festivals",
            "backyard nights",
        ],
        filler: &[
            "Packs down small for easy carrying.",
            "Weather resistant seams keep the rain out.",
            "Tested on rugged mountain routes.",
            "Clips onto any pack with the included strap.",
        ],
    },
    Category {
        nouns: &[
            "lamp", "pillow", "blanket", "rug", "curtain", "mirror", "vase", "candle",
        ],
        modifiers: &["table", "throw", "floor", "scented", "decorative"],
        uses: &["cozy evenings", "the living room", "guest bedrooms", "a reading nook"],
        filler: &[
            "Adds a warm touch to any room.",
            "Designed to match modern and classic decor.",
            "Soft texture that feels great every day.",
            "Arrives ready to display right out of the box.",
        ],
    },
    Category {
        nouns: &[
            "headphones",
            "speaker",
            "charger",
            "keyboard",
            "mouse",
            "webcam",
            "router",
            "monitor",
        ],
        modifiers: &["wireless", "bluetooth", "gaming", "portable", "usb"],
        uses: &["remote work", "long commutes", "late night gaming", "video calls"],
        filler: &[
            "Connects in seconds with no extra software.",
            "The battery lasts all day on a single charge.",
            "Compatible with most laptops and phones.",
            "Includes a braided cable and quick start guide.",
        ],
    },
    Category {
        nouns: &[
            "jacket", "hoodie", "sweater", "beanie", "scarf", "sneakers", "t-shirt", "jeans",
        ],
        modifiers: &["rain", "fleece", "running", "knit", "graphic"],
        uses: &["chilly mornings", "everyday wear", "weekend errands", "the gym"],
        filler: &[
            "Machine washable and quick to dry.",
            "Relaxed fit with room to layer.",
            "Soft fabric that keeps its shape wash after wash.",
            "Available in a range of sizes.",
        ],
    },
    Category {
        nouns: &[
            "puzzle",
            "robot",
            "kite",
            "doll",
            "train set",
            "building blocks",
            "board game",
        ],
        modifiers: &["wooden", "kids", "stem", "magnetic", "family"],
        uses: &[
            "rainy afternoons",
            "family game night",
            "birthday parties",
            "curious young minds",
        ],
        filler: &[
            "Encourages creative and cooperative play.",
            "Made from child safe materials.",
            "Recommended for ages three and up.",
            "Pieces store neatly in the sturdy box.",
        ],
    },
    Category {
        nouns: &[
            "towel",
            "bath mat",
            "soap dispenser",
            "shower caddy",
            "toothbrush holder",
            "robe",
        ],
        modifiers: &["bath", "hand", "plush", "bamboo", "cotton"],
        uses: &[
            "relaxing weekends",
            "the guest bath",
            "busy households",
            "spa days at home",
        ],
        filler: &[
            "Absorbent and gentle on skin.",
            "Resists mildew in humid bathrooms.",
            "Easy to wipe clean after use.",
            "Brings a hotel feel to your routine.",
        ],
    },
];

const BRANDS: &[&str] = &[
    "acme",
    "northpeak",
    "blue harbor",
    "lumen",
    "oakhurst",
    "vantage",
    "pebble & co",
    "brightside",
    "urban nest",
    "kestrel",
    "maple lane",
    "solstice",
    "ironwood",
    "tidewater",
    "cobalt",
    "hearthstone",
    "silver fern",
    "zephyr",
    "granite bay",
    "willow",
    "summit",
    "nova",
    "redwood",
    "clearwater",
];

const ATTRIBUTES: &[&str] = &[
    "red",
    "blue",
    "black",
    "white",
    "green",
    "gray",
    "navy",
    "teal",
    "small",
    "medium",
    "large",
    "xl",
    "12oz",
    "16oz",
    "2-pack",
    "4-pack",
    "1.5l",
    "queen",
    "king",
    "ceramic",
    "stainless steel",
    "cotton",
    "wool",
    "glass",
    "recycled plastic",
    "matte black",
    "oak wood",
];

const GENERIC_FILLER: &[&str] = &[
    "Easy to clean and simple to store.",
    "Backed by a one year warranty.",
    "Ships in recyclable packaging.",
    "Makes a thoughtful gift for any occasion.",
    "Thousands of customers rate it five stars.",
];

/// Every distinct item name the generator can produce.
pub fn item_name_pool() -> Vec<String> {
    let mut pool = Vec::new();
    for c in CATEGORIES {
        for n in c.nouns {
            pool.push(n.to_string());
            for m in c.modifiers {
                pool.push(format!("{m} {n}"));
            }
        }
    }
    pool.sort();
    pool.dedup();
    pool
}

fn words(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split_whitespace().map(str::to_string)
}

fn push_span(tokens: &mut Vec<String>, tags: &mut Vec<String>, text: &str, ty: &str) {
    for (i, w) in words(text).enumerate() {
        tokens.push(w);
        tags.push(if i == 0 { format!("B-{ty}") } else { format!("I-{ty}") });
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn generate_item(rng: &mut ChaCha8Rng, index: usize, scheme: &TagScheme) -> Result<CatalogItem> {
    let cat = CATEGORIES.choose(rng).expect("non-empty");
    let noun = *cat.nouns.choose(rng).expect("non-empty");
    let name = if rng.gen_bool(0.7) {
        format!("{} {noun}", cat.modifiers.choose(rng).expect("non-empty"))
    } else {
        noun.to_string()
    };
    let brand = *BRANDS.choose(rng).expect("non-empty");
    let n_attrs = rng.gen_range(1..=2);
    let attrs: Vec<&str> = ATTRIBUTES.choose_multiple(rng, n_attrs).copied().collect();

    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    if rng.gen_bool(0.85) {
        push_span(&mut tokens, &mut tags, brand, "BRAND");
    }
    push_span(&mut tokens, &mut tags, &name, "ITEM");
    if rng.gen_bool(0.3) {
        tokens.push(if rng.gen_bool(0.5) { "," } else { "-" }.to_string());
        tags.push("O".into());
    }
    for a in &attrs {
        push_span(&mut tokens, &mut tags, a, "ATTR");
    }

    let use_case = *cat.uses.choose(rng).expect("non-empty");
    let anchor = match rng.gen_range(0..4) {
        0 => format!("The {name} from {brand} is built for {use_case}."),
        1 => format!("This {name} is a great pick for {use_case}."),
        2 => format!("Our {name} comes in {} and suits {use_case}.", attrs[0]),
        _ => format!("Meet the {name}, made for {use_case}."),
    };
    let n_sentences = rng.gen_range(2..=4);
    let mut sentences = vec![anchor];
    let mut pool: Vec<&str> = cat.filler.to_vec();
    pool.extend_from_slice(GENERIC_FILLER);
    pool.shuffle(rng);
    sentences.extend(pool.into_iter().take(n_sentences - 1).map(str::to_string));
    // the name-bearing sentence is not always first
    let pos = rng.gen_range(0..sentences.len());
    sentences.swap(0, pos);
    let description = sentences.iter().map(|s| capitalize(s)).collect::<Vec<_>>().join(" ");

    CatalogItem::new(format!("item-{index}"), tokens, tags, description, scheme)
}

/// `n` items under the default tag scheme, deterministic in `seed`.
pub fn generate_synthetic(seed: u64, n: usize) -> Result<Vec<CatalogItem>> {
    if n == 0 {
        return Err(Error::Contract("synthetic catalog size must be >= 1".into()));
    }
    let scheme = TagScheme::default();
    (0..n)
        .map(|i| generate_item(&mut seed::stream(seed, &[i as u64]), i, &scheme))
        .collect()
}
