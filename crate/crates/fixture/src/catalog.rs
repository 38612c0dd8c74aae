//! Products sold by the fixture shop.

#[derive(Debug, Clone, Copy)]
pub struct Product {
    pub id: &'static str,
    pub title: &'static str,
    pub price_cents: i64,
    /// Shown per unit on result cards, e.g. "$1.83/Ounce".
    pub unit_price: Option<&'static str>,
    pub rating: &'static str,
    pub reviews: u32,
    pub delivery_day: &'static str,
    pub colors: &'static [&'static str],
    pub sizes: &'static [&'static str],
    pub keywords: &'static [&'static str],
    pub bullets: &'static [&'static str],
}

impl Product {
    pub fn price_label(&self) -> String {
        format_cents(self.price_cents)
    }

    /// Case-insensitive match of every query token against the title and
    /// keywords. Possessives and plurals are folded so "woman's jackets"
    /// finds "Jackets For Women".
    pub fn matches(&self, query: &str) -> bool {
        let hay: Vec<String> = tokens(self.title)
            .into_iter()
            .chain(self.keywords.iter().flat_map(|k| tokens(k)))
            .collect();
        let wanted = tokens(query);
        !wanted.is_empty() && wanted.iter().all(|w| hay.iter().any(|h| h == w))
    }
}

pub fn format_cents(cents: i64) -> String {
    format!("${}.{:02}", cents / 100, cents % 100)
}

fn fold(word: &str) -> String {
    let w = word.trim_end_matches("'s").trim_end_matches('\'');
    let w = match w {
        "women" | "womens" => "woman",
        "men" | "mens" => "man",
        "kid" | "kids" | "children" => "kid",
        other => other,
    };
    if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
        w[..w.len() - 1].to_string()
    } else {
        w.to_string()
    }
}

fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(fold)
        .collect()
}

pub const PRODUCTS: &[Product] = &[
    Product {
        id: "B0CJ4WZ6NQ",
        title: "Jackets For Women Womens Hooded Fleece Line Coats Parkas Faux Fur Jackets with Pockets",
        price_cents: 3999,
        unit_price: None,
        rating: "4.2",
        reviews: 1287,
        delivery_day: "Wed, Oct 16",
        colors: &["Navy", "Black", "Burgundy"],
        sizes: &["Small", "Medium", "Large"],
        keywords: &["coat", "winter", "outerwear", "fleece"],
        bullets: &[
            "Soft faux fur lined hood keeps the wind out",
            "Two zip pockets and a two-way front zipper",
            "Machine wash cold, hang dry",
        ],
    },
    Product {
        id: "B09TQ3L7RM",
        title: "Women's Lightweight Packable Puffer Jacket Water Resistant Quilted Coat",
        price_cents: 5499,
        unit_price: None,
        rating: "4.5",
        reviews: 3412,
        delivery_day: "Tue, Oct 15",
        colors: &["Black", "Olive", "Pink"],
        sizes: &["Small", "Medium", "Large", "X-Large"],
        keywords: &["coat", "winter", "outerwear", "puffer"],
        bullets: &[
            "Packs into its own stuff sack",
            "Water resistant shell",
            "Recycled polyester fill",
        ],
    },
    Product {
        id: "B07XK2M9LP",
        title: "Men's Full-Zip Polar Fleece Jacket",
        price_cents: 2850,
        unit_price: None,
        rating: "4.6",
        reviews: 8120,
        delivery_day: "Tue, Oct 15",
        colors: &["Charcoal", "Navy"],
        sizes: &["Medium", "Large", "X-Large"],
        keywords: &["coat", "outerwear", "fleece"],
        bullets: &["Anti-pill fleece", "Zip hand pockets"],
    },
    Product {
        id: "B08RAIN001",
        title: "Unisex Waterproof Rain Jacket with Hood",
        price_cents: 4500,
        unit_price: None,
        rating: "3.9",
        reviews: 542,
        delivery_day: "Thu, Oct 17",
        colors: &["Yellow", "Blue"],
        sizes: &["Small", "Medium", "Large"],
        keywords: &["raincoat", "outerwear", "woman", "man"],
        bullets: &["Sealed seams", "Adjustable hood"],
    },
    Product {
        id: "B0FORD1966",
        title: "1966 Ford F-100 Clear Body: Slash, Slash 4x4",
        price_cents: 4399,
        unit_price: Some("$43.99/Count"),
        rating: "4.3",
        reviews: 103,
        delivery_day: "Mon, Oct 14",
        colors: &[],
        sizes: &[],
        keywords: &["rc", "truck", "body", "hobby"],
        bullets: &[
            "Unpainted clear polycarbonate body",
            "Fits Slash and Slash 4x4 chassis",
        ],
    },
    Product {
        id: "B0UMBRKIDS",
        title: "Kids Umbrella with Easy Grip Handle",
        price_cents: 1299,
        unit_price: None,
        rating: "4.4",
        reviews: 77,
        delivery_day: "Wed, Oct 16",
        colors: &["Red", "Green"],
        sizes: &[],
        keywords: &["rain", "children"],
        bullets: &["Pinch-proof runner", "Reflective trim"],
    },
];

pub fn find(id: &str) -> Option<&'static Product> {
    PRODUCTS.iter().find(|p| p.id == id)
}

pub fn search(query: &str) -> Vec<&'static Product> {
    PRODUCTS.iter().filter(|p| p.matches(query)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn womens_jacket_query_finds_the_parka() {
        let hits = search("woman's jacket");
        assert!(hits.iter().any(|p| p.id == "B0CJ4WZ6NQ"));
        assert!(hits.iter().all(|p| p.id != "B07XK2M9LP"));
    }

    #[test]
    fn empty_query_matches_nothing() {
        assert!(search("   ").is_empty());
    }

    #[test]
    fn cents_format() {
        assert_eq!(format_cents(3999), "$39.99");
        assert_eq!(format_cents(1205), "$12.05");
    }
}
