//! A small storefront with the markup noise of a real marketplace: nested
//! layout wrappers, inline styles, tracking scripts and ad slots.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Form, Json, Router};
use serde::{Deserialize, Serialize};

use crate::catalog::{self, format_cents, Product};

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct CartLine {
    pub product: String,
    pub title: String,
    pub color: Option<String>,
    pub size: Option<String>,
    pub price_cents: i64,
    pub quantity: u32,
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct Cart {
    pub lines: Vec<CartLine>,
    #[serde(skip)]
    last_added: Option<usize>,
}

impl Cart {
    pub fn count(&self) -> u32 {
        self.lines.iter().map(|l| l.quantity).sum()
    }

    pub fn subtotal_cents(&self) -> i64 {
        self.lines
            .iter()
            .map(|l| l.price_cents * i64::from(l.quantity))
            .sum()
    }
}

#[derive(Default)]
pub struct ShopState {
    carts: Mutex<HashMap<String, Cart>>,
    next_sid: AtomicU64,
}

impl ShopState {
    pub fn cart(&self, sid: &str) -> Cart {
        self.carts.lock().unwrap().get(sid).cloned().unwrap_or_default()
    }

    /// Every cart that holds at least one line, keyed by session cookie.
    pub fn carts(&self) -> HashMap<String, Cart> {
        self.carts
            .lock()
            .unwrap()
            .iter()
            .filter(|(_, c)| !c.lines.is_empty())
            .map(|(k, c)| (k.clone(), c.clone()))
            .collect()
    }
}

pub fn router(state: Arc<ShopState>) -> Router {
    Router::new()
        .route("/", get(home))
        .route("/search", get(search))
        .route("/product/{id}", get(product))
        .route("/cart", get(cart))
        .route("/cart/add", post(cart_add))
        .route("/cart/confirmation", get(confirmation))
        .route("/api/cart", get(api_cart))
        .with_state(state)
}

struct Sid {
    id: String,
    fresh: bool,
}

fn sid(state: &ShopState, headers: &HeaderMap) -> Sid {
    let existing = headers
        .get_all(header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|kv| kv.trim().strip_prefix("sid="))
        .next();
    match existing {
        Some(id) => Sid {
            id: id.to_string(),
            fresh: false,
        },
        None => Sid {
            id: format!("s{}", state.next_sid.fetch_add(1, Ordering::Relaxed) + 1),
            fresh: true,
        },
    }
}

fn html_response(sid: &Sid, status: StatusCode, body: String) -> Response {
    let mut resp = (status, [(header::CONTENT_TYPE, "text/html; charset=utf-8")], body).into_response();
    set_cookie(sid, &mut resp);
    resp
}

fn set_cookie(sid: &Sid, resp: &mut Response) {
    if sid.fresh {
        if let Ok(v) = HeaderValue::from_str(&format!("sid={}; Path=/; HttpOnly", sid.id)) {
            resp.headers_mut().insert(header::SET_COOKIE, v);
        }
    }
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

fn slugish(s: &str) -> String {
    s.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

fn layout(title: &str, query: &str, cart_count: u32, body: &str) -> String {
    format!(
        r##"<!DOCTYPE html>
<html lang="en-us" class="a-js a-audio a-video a-canvas">
<head>
<meta charset="utf-8">
<meta name="viewport" content="width=device-width, initial-scale=1">
<title>{title} : Fixture Shop</title>
<link rel="stylesheet" href="/static/css/site.css">
<style>.a-hidden{{display:none}}.nav-belt{{background:#131921;color:#fff}}.s-card-container{{border:1px solid #ddd}}</style>
<script type="text/javascript">window.ue_t0 = +new Date(); var ue_sid = "000-0000000"; function ueLogError(e) {{ (window.ueErrors = window.ueErrors || []).push(e); }}</script>
</head>
<body class="a-m-us a-aui_72554-c">
<div id="a-page">
<header id="nav-belt" class="nav-belt nav-sprite-v1" role="banner">
  <div class="nav-left">
    <a id="nav-logo" class="nav-logo-link nav-progressive-attribute" href="/" aria-label="Fixture Shop"><span class="nav-sprite nav-logo-base"></span><span class="nav-logo-text">Fixture Shop</span></a>
  </div>
  <div class="nav-fill">
    <form id="nav-search" class="nav-searchbar" action="/search" method="get" accept-charset="utf-8" role="search">
      <div class="nav-search-field">
        <label for="twotabsearchtextbox" class="a-hidden">Search Fixture Shop</label>
        <input type="text" id="twotabsearchtextbox" name="q" value="{query}" placeholder="Search Fixture Shop" autocomplete="off" class="nav-input nav-progressive-attribute" dir="auto" tabindex="0" aria-label="Search Fixture Shop">
      </div>
      <div class="nav-search-submit nav-sprite">
        <span id="nav-search-submit-text" class="nav-search-submit-text nav-sprite"><input type="submit" id="nav-search-submit-button" class="nav-input nav-progressive-attribute" value="Go" tabindex="0"></span>
      </div>
    </form>
  </div>
  <div class="nav-right">
    <a id="nav-cart" href="/cart" class="nav-a nav-a-2 nav-truncate" aria-label="{cart_count} items in cart"><div id="nav-cart-count-container"><span id="nav-cart-count" aria-hidden="true" class="nav-cart-count nav-cart-0 nav-progressive-attribute">{cart_count}</span><span class="nav-cart-icon nav-sprite"></span></div><span class="nav-line-2">Cart</span></a>
  </div>
</header>
<div id="nav-subnav" class="nav-subnav" data-category="all"><a class="nav-a" href="/search?q=deals" data-csa-c-type="link">Today's Deals</a><a class="nav-a" href="/search?q=gift">Gift Cards</a></div>
<main id="pageContent">
{body}
</main>
<div class="ad-slot" id="ad-btf" style="width:728px;height:90px" data-ad-placement="btf"><iframe title="Advertisement" src="about:blank" width="728" height="90"></iframe></div>
<footer id="navFooter" class="navLeftFooter nav-sprite-v1"><div class="navFooterLine navFooterLinkLine"><a href="/conditions">Conditions of Use</a><a href="/privacy">Privacy Notice</a><span>&copy; 1996-2024, Fixture Shop, Inc. or its affiliates</span></div></footer>
</div>
<script>(function(){{ var s = document.createElement("script"); s.src = "/static/js/metrics.js"; document.body.appendChild(s); }})();</script>
</body>
</html>
"##,
        title = escape(title),
        query = escape(query),
        cart_count = cart_count,
        body = body
    )
}

pub fn render_home(cart_count: u32) -> String {
    let categories = [
        ("Jackets", "jacket"),
        ("Umbrellas", "umbrella"),
        ("RC Bodies", "rc body"),
    ];
    let mut cards = String::new();
    for (label, q) in categories {
        let _ = write!(
            cards,
            r#"<div class="gw-card a-cardui" data-card-metrics-id="{id}"><div class="a-cardui-header"><h2 class="a-color-base headline truncate-1line">Shop {label}</h2></div><div class="a-cardui-body"><a class="a-link-normal gw-category-link" href="/search?q={href}"><span class="a-truncate-full">{label}</span></a></div></div>"#,
            id = slugish(label),
            label = escape(label),
            href = q.replace(' ', "+"),
        );
    }
    let body = format!(
        r#"<div id="gw-layout" class="gw-layout"><h1 class="page-title">Welcome to Fixture Shop</h1><div id="gw-card-layout" class="gw-card-layout gw-auto-height">{cards}</div></div>"#
    );
    layout("Home", "", cart_count, &body)
}

fn stars_class(rating: &str) -> String {
    let r: f32 = rating.parse().unwrap_or(0.0);
    let whole = r.floor() as u32;
    if r - whole as f32 >= 0.5 {
        format!("a-star-small-{whole}-5")
    } else {
        format!("a-star-small-{whole}")
    }
}

fn result_card(p: &Product, index: usize) -> String {
    let (whole, fraction) = (p.price_cents / 100, p.price_cents % 100);
    let unit = p
        .unit_price
        .map(|u| format!(r#"<span class="a-size-base a-color-secondary">({})</span>"#, escape(u)))
        .unwrap_or_default();
    format!(
        r##"<div class="sg-col-4-of-24 sg-col-4-of-12 s-result-item s-asin sg-col-4-of-16 sg-col s-widget-spacing-small sg-col-4-of-20" data-asin="{id}" data-index="{index}" data-uuid="{id}-{index}" data-component-type="s-search-result">
  <div class="sg-col-inner">
    <div class="s-widget-container s-spacing-small s-widget-container-height-small celwidget slot=MAIN template=SEARCH_RESULTS widgetId=search-results_{index}">
      <div class="s-card-container s-overflow-hidden aok-relative puis-include-content-margin puis s-latency-cf-section s-card-border" style="border-radius:8px">
        <div class="a-section a-spacing-base">
          <div class="s-product-image-container aok-relative s-text-center s-image-overlay-grey puis-image-overlay-grey s-padding-left-small s-padding-right-small puis-spacing-small s-height-equalized puis">
            <span data-component-type="s-product-image" class="rush-component"><a class="a-link-normal s-no-outline" tabindex="-1" href="/product/{id}"><div class="a-section aok-relative s-image-square-aspect"><img class="s-image" src="/static/img/{id}._AC_UL320_.jpg" srcset="/static/img/{id}._AC_UL320_.jpg 1x, /static/img/{id}._AC_UL480_.jpg 1.5x" alt="{title}" data-image-index="{index}" data-image-load=""></div></a></span>
          </div>
          <div class="search-result a-section a-spacing-small puis-padding-left-small puis-padding-right-small" data-cy="title-recipe">
            <div class="a-section a-spacing-none a-spacing-top-small s-title-instructions-style">
              <h2 class="a-size-mini a-spacing-none a-color-base s-line-clamp-4"><a class="a-link-normal s-underline-text s-underline-link-text s-link-style a-text-normal product-name" href="/product/{id}">{title}</a></h2>
            </div>
            <div class="a-section a-spacing-none a-spacing-top-micro" data-cy="reviews-block">
              <div class="product-review a-row a-size-small"><span class="product-rating" aria-label="{rating} out of 5 stars"><a class="a-popover-trigger a-declarative" href="javascript:void(0)" role="button"><i class="a-icon a-icon-star-small {stars} aok-align-bottom"></i><span class="a-icon-alt">{rating} out of 5 stars</span></a></span><span class="product-rating-count" aria-label="{reviews} ratings"><a class="a-link-normal s-underline-text s-underline-link-text s-link-style" href="/product/{id}#customerReviews"><span class="a-size-base s-underline-text">{reviews} reviews</span></a></span></div>
            </div>
            <div class="a-section a-spacing-none a-spacing-top-small s-price-instructions-style" data-cy="price-recipe">
              <div class="product-price a-row a-size-base a-color-base"><a class="a-link-normal s-no-hover s-underline-text s-underline-link-text s-link-style a-text-normal" href="/product/{id}"><span class="a-price" data-a-size="xl" data-a-color="base"><span class="a-offscreen">{price}</span><span aria-hidden="true"><span class="a-price-symbol">$</span><span class="a-price-whole">{whole}<span class="a-price-decimal">.</span></span><span class="a-price-fraction">{fraction:02}</span></span></span></a>{unit}</div>
            </div>
            <div class="a-section a-spacing-none a-spacing-top-micro" data-cy="delivery-recipe">
              <div class="product-delivery a-row a-size-base a-color-secondary s-align-children-center"><span aria-label="FREE delivery {day}"><span class="a-color-base">FREE delivery </span><span class="a-color-base a-text-bold">{day}</span></span></div>
            </div>
          </div>
        </div>
      </div>
    </div>
  </div>
</div>
"##,
        id = p.id,
        index = index,
        title = escape(p.title),
        rating = p.rating,
        stars = stars_class(p.rating),
        reviews = p.reviews,
        price = p.price_label(),
        whole = whole,
        fraction = fraction,
        unit = unit,
        day = escape(p.delivery_day),
    )
}

pub fn render_search(query: &str, cart_count: u32) -> String {
    let hits = catalog::search(query);
    let mut results = String::new();
    for (i, p) in hits.iter().enumerate() {
        results.push_str(&result_card(p, i + 1));
        if i == 0 {
            results.push_str(r#"<div class="s-result-item s-widget sg-col-0-of-12 AdHolder" data-component-type="sp-sponsored-result"><div class="s-widget-container"><span class="a-size-mini">Sponsored</span><div class="ad-slot" style="height:120px"></div></div></div>"#);
        }
    }
    let summary = if hits.is_empty() {
        format!(
            r#"<div class="s-no-results a-section a-spacing-top-medium">No results for "{}". Try checking your spelling or use more general terms.</div>"#,
            escape(query)
        )
    } else {
        String::new()
    };
    let body = format!(
        r#"<div class="s-desktop-width-max s-desktop-content s-opposite-dir sg-row"><div class="sg-col-20-of-24 s-matching-dir sg-col-16-of-20 sg-col sg-col-8-of-12 sg-col-12-of-16"><div class="sg-col-inner"><span class="rush-component s-latency-cf-section" data-component-type="s-search-results"><h1 class="page-title a-size-base">{count} results for "{q}"</h1>{summary}<div class="s-main-slot s-result-list s-search-results sg-row">{results}</div></span></div></div></div>"#,
        count = hits.len(),
        q = escape(query),
    );
    layout(query, query, cart_count, &body)
}

fn variation(kind: &str, label: &str, options: &[&str]) -> String {
    if options.is_empty() {
        return String::new();
    }
    let mut out = format!(
        r#"<div id="variation_{kind}" class="a-section a-spacing-small twister-row"><div class="a-row"><label class="a-form-label">{label}:</label></div><ul class="a-unordered-list a-nostyle a-button-list a-horizontal">"#
    );
    for opt in options {
        let v = slugish(opt);
        let _ = write!(
            out,
            r#"<li class="swatch-list-item-text" data-defaultasin=""><span class="a-list-item"><input type="radio" id="{kind}_{v}" name="{kind}" value="{v}" class="a-button-input"><label for="{kind}_{v}" class="a-button-text">{text}</label></span></li>"#,
            text = escape(opt)
        );
    }
    out.push_str("</ul></div>");
    out
}

pub fn render_product(p: &Product, cart_count: u32) -> String {
    let mut bullets = String::new();
    for b in p.bullets {
        let _ = write!(bullets, r#"<li><span class="a-list-item">{}</span></li>"#, escape(b));
    }
    let body = format!(
        r##"<div id="dp" class="fashion en_US"><div id="dp-container" class="a-container">
<div id="centerCol" class="centerColAlign">
  <div id="titleSection" class="a-section a-spacing-none"><h1 id="title" class="a-size-large a-spacing-none"><span id="productTitle" class="a-size-large product-title-word-break">{title}</span></h1></div>
  <div id="averageCustomerReviews" data-asin="{id}"><span class="a-declarative"><a href="javascript:void(0)" class="a-popover-trigger"><i class="a-icon a-icon-star a-star-4-5 cm-cr-review-stars-spacing-big"><span class="a-icon-alt">{rating} out of 5 stars</span></i></a></span><a id="acrCustomerReviewLink" href="#customerReviews"><span id="acrCustomerReviewText" class="a-size-base">{reviews} ratings</span></a></div>
  <div id="corePrice_feature_div" class="celwidget"><div class="a-section a-spacing-micro"><span class="a-price aok-align-center" data-a-size="xl"><span class="a-offscreen">{price}</span><span aria-hidden="true">{price}</span></span></div></div>
  <form id="addToCart" method="post" action="/cart/add" class="a-content">
    <input type="hidden" name="product" value="{id}">
    <input type="hidden" id="session-id" name="session-id" value="000-0000000">
    <div id="twister_feature_div">{colors}{sizes}</div>
    <div id="buybox" class="a-box-group"><span id="submit.add-to-cart" class="a-button a-spacing-small a-button-primary"><span class="a-button-inner"><button id="add-to-cart-button" type="submit" name="submit.add-to-cart" class="a-button-input" aria-labelledby="submit.add-to-cart-announce"><span id="submit.add-to-cart-announce" class="a-button-text">Add to Cart</span></button></span></span></div>
  </form>
  <div id="feature-bullets" class="a-section a-spacing-medium a-spacing-top-small"><h3 class="a-spacing-mini">About this item</h3><ul class="a-unordered-list a-vertical a-spacing-mini">{bullets}</ul></div>
</div>
</div></div>"##,
        id = p.id,
        title = escape(p.title),
        rating = p.rating,
        reviews = p.reviews,
        price = p.price_label(),
        colors = variation("color", "Color", p.colors),
        sizes = variation("size", "Size", p.sizes),
    );
    layout(p.title, "", cart_count, &body)
}

fn variant_label(line: &CartLine) -> String {
    let mut parts = Vec::new();
    if let Some(c) = &line.color {
        parts.push(format!("Color: {c}"));
    }
    if let Some(s) = &line.size {
        parts.push(format!("Size: {s}"));
    }
    parts.join(", ")
}

pub fn render_confirmation(line: &CartLine, cart: &Cart) -> String {
    let body = format!(
        r#"<div id="sw-atc-details-single-container" class="a-section"><div id="order-confirmation" class="a-box a-alert a-alert-success" role="alert"><div class="a-box-inner a-alert-container"><h1 class="a-alert-heading">Added to Cart</h1><div class="a-row sc-item"><span class="sc-product-title a-truncate-full">{title}</span><span class="sc-product-variant a-size-small">{variant}</span><span class="sc-product-price a-text-bold">{price}</span></div><div class="sc-subtotal a-row">Cart subtotal ({count} {items}): {subtotal}</div><div class="a-row"><a id="continue-shopping" class="a-button-text" href="/">Continue shopping</a><a id="view-cart" class="a-button-text" href="/cart">Go to Cart</a></div></div></div></div>"#,
        title = escape(&line.title),
        variant = escape(&variant_label(line)),
        price = format_cents(line.price_cents),
        count = cart.count(),
        items = if cart.count() == 1 { "item" } else { "items" },
        subtotal = format_cents(cart.subtotal_cents()),
    );
    layout("Added to Cart", "", cart.count(), &body)
}

pub fn render_cart(cart: &Cart) -> String {
    let mut rows = String::new();
    for line in &cart.lines {
        let _ = write!(
            rows,
            r#"<div class="sc-list-item a-row" data-asin="{id}"><div class="sc-list-item-content"><span class="sc-product-title a-truncate-full">{title}</span><span class="sc-product-variant a-size-small">{variant}</span><span class="sc-quantity">Qty: {qty}</span><span class="sc-product-price a-text-bold">{price}</span></div></div>"#,
            id = line.product,
            title = escape(&line.title),
            variant = escape(&variant_label(line)),
            qty = line.quantity,
            price = format_cents(line.price_cents),
        );
    }
    let heading = if cart.lines.is_empty() {
        "Your Fixture Shop Cart is empty"
    } else {
        "Shopping Cart"
    };
    let body = format!(
        r#"<div id="sc-active-cart" class="a-cardui"><h1 class="page-title a-spacing-mini">{heading}</h1><div class="sc-list-body">{rows}</div><div class="sc-subtotal a-row">Subtotal ({count} {items}): {subtotal}</div></div>"#,
        count = cart.count(),
        items = if cart.count() == 1 { "item" } else { "items" },
        subtotal = format_cents(cart.subtotal_cents()),
    );
    layout("Shopping Cart", "", cart.count(), &body)
}

fn not_found(sid: &Sid, count: u32) -> Response {
    let body = r#"<div class="a-section"><h1 class="page-title">Sorry, we couldn't find that page</h1><a href="/">Go to the home page</a></div>"#;
    html_response(sid, StatusCode::NOT_FOUND, layout("Page Not Found", "", count, body))
}

async fn home(State(state): State<Arc<ShopState>>, headers: HeaderMap) -> Response {
    let sid = sid(&state, &headers);
    let count = state.cart(&sid.id).count();
    html_response(&sid, StatusCode::OK, render_home(count))
}

#[derive(Deserialize)]
struct SearchQuery {
    #[serde(default)]
    q: String,
}

async fn search(
    State(state): State<Arc<ShopState>>,
    headers: HeaderMap,
    Query(q): Query<SearchQuery>,
) -> Response {
    let sid = sid(&state, &headers);
    let count = state.cart(&sid.id).count();
    html_response(&sid, StatusCode::OK, render_search(q.q.trim(), count))
}

async fn product(
    State(state): State<Arc<ShopState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Response {
    let sid = sid(&state, &headers);
    let count = state.cart(&sid.id).count();
    match catalog::find(&id) {
        Some(p) => html_response(&sid, StatusCode::OK, render_product(p, count)),
        None => not_found(&sid, count),
    }
}

#[derive(Deserialize)]
struct AddForm {
    product: String,
    color: Option<String>,
    size: Option<String>,
}

fn option_label(options: &[&str], slug: Option<&str>) -> Option<String> {
    let slug = slug?;
    options
        .iter()
        .find(|o| slugish(o) == slug)
        .map(|o| o.to_string())
}

async fn cart_add(
    State(state): State<Arc<ShopState>>,
    headers: HeaderMap,
    Form(form): Form<AddForm>,
) -> Response {
    let sid = sid(&state, &headers);
    let Some(p) = catalog::find(&form.product) else {
        let count = state.cart(&sid.id).count();
        return not_found(&sid, count);
    };
    let line = CartLine {
        product: p.id.to_string(),
        title: p.title.to_string(),
        color: option_label(p.colors, form.color.as_deref()),
        size: option_label(p.sizes, form.size.as_deref()),
        price_cents: p.price_cents,
        quantity: 1,
    };
    {
        let mut carts = state.carts.lock().unwrap();
        let cart = carts.entry(sid.id.clone()).or_default();
        let same = cart.lines.iter().position(|l| {
            l.product == line.product && l.color == line.color && l.size == line.size
        });
        let idx = match same {
            Some(i) => {
                cart.lines[i].quantity += 1;
                i
            }
            None => {
                cart.lines.push(line);
                cart.lines.len() - 1
            }
        };
        cart.last_added = Some(idx);
    }
    let mut resp = Redirect::to("/cart/confirmation").into_response();
    set_cookie(&sid, &mut resp);
    resp
}

async fn confirmation(State(state): State<Arc<ShopState>>, headers: HeaderMap) -> Response {
    let sid = sid(&state, &headers);
    let cart = state.cart(&sid.id);
    match cart.last_added.and_then(|i| cart.lines.get(i)) {
        Some(line) => html_response(&sid, StatusCode::OK, render_confirmation(line, &cart)),
        None => html_response(&sid, StatusCode::OK, render_cart(&cart)),
    }
}

async fn cart(State(state): State<Arc<ShopState>>, headers: HeaderMap) -> Response {
    let sid = sid(&state, &headers);
    let cart = state.cart(&sid.id);
    html_response(&sid, StatusCode::OK, render_cart(&cart))
}

async fn api_cart(State(state): State<Arc<ShopState>>, headers: HeaderMap) -> Response {
    let sid = sid(&state, &headers);
    let cart = state.cart(&sid.id);
    let mut resp = Json(serde_json::json!({
        "count": cart.count(),
        "subtotal_cents": cart.subtotal_cents(),
        "lines": cart.lines,
    }))
    .into_response();
    set_cookie(&sid, &mut resp);
    resp
}
