//! Small synthetic worlds: domains, intents, slot vocabularies and User
//! phrasing, plus helpers that turn them into goals, API tables and
//! human-style episodes (produced by the scripted agent pair).
//!
//! Slot names and slot values are unique across every world here, so that an
//! agent can only recognise a domain it has seen data for.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::IndexedRandom;

use crate::agents::phrasebook::IntentPhrasing;
use crate::agents::{DecodeConfig, PhraseBook, ScriptedAssistant, ScriptedUser};
use crate::dialogue::{serialize_call, ApiCall, ApiSchema, Episode, Fold, Origin};
use crate::mock_api::ApiTable;
use crate::orchestrator::{SimConfig, Simulator};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SlotSpec {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentSpec {
    pub intent: String,
    pub slots: Vec<SlotSpec>,
    pub phrasing: Option<IntentPhrasing>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    pub intents: Vec<IntentSpec>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct World {
    pub domains: Vec<DomainSpec>,
}

type Phr<'a> = &'a [(&'a str, &'a [&'a str])];

fn intent(name: &str, slots: &[(&str, &[&str])]) -> IntentSpec {
    IntentSpec {
        intent: name.to_string(),
        slots: slots
            .iter()
            .map(|(n, vs)| SlotSpec {
                name: n.to_string(),
                values: vs.iter().map(|v| v.to_string()).collect(),
            })
            .collect(),
        phrasing: None,
    }
}

fn phrased(mut spec: IntentSpec, generic: bool, reveal: Phr<'_>, answer: Phr<'_>) -> IntentSpec {
    let conv = |p: Phr<'_>| {
        p.iter()
            .map(|(slot, ts)| (slot.to_string(), ts.iter().map(|t| t.to_string()).collect()))
            .collect()
    };
    spec.phrasing = Some(IntentPhrasing {
        generic,
        reveal: conv(reveal),
        answer: conv(answer),
    });
    spec
}

fn domain(name: &str, intents: Vec<IntentSpec>) -> DomainSpec {
    DomainSpec {
        name: name.to_string(),
        intents,
    }
}

impl World {
    /// Ten training domains, all phrased with the generic templates.
    pub fn in_domain() -> Self {
        let d = vec![
            domain("Alarm", vec![intent("AddAlarm", &[
                ("alarm_time", &["0615", "0630", "0700", "0745", "0800", "0930"]),
                ("alarm_name", &["Wakeup", "Workout", "Meds", "Pickup", "Standup", "Laundry"]),
            ])]),
            domain("Banks", vec![intent("TransferMoney", &[
                ("transfer_amount", &["120 usd", "45 usd", "300 usd", "75 usd", "990 usd", "15 usd"]),
                ("recipient_name", &["Ana", "Bruno", "Chen", "Dmitri", "Elif", "Farah"]),
                ("source_account", &["checking", "savings", "brokerage"]),
            ])]),
            domain("Buses", vec![intent("BuyBusTicket", &[
                ("bus_origin", &["Fresno", "Modesto", "Reno", "Eugene", "Boise", "Tucson"]),
                ("bus_destination", &["Austin", "Dallas", "Denver", "Omaha", "Tulsa", "Wichita"]),
                ("bus_date", &["March 3", "March 9", "March 14", "March 20", "March 26", "March 31"]),
            ])]),
            domain("Events", vec![intent("BuyEventTickets", &[
                ("event_name", &["Hamilton", "Wicked", "Evita", "Grease", "Annie", "Matilda"]),
                ("event_seats", &["2 seats", "3 seats", "4 seats", "5 seats", "6 seats"]),
            ])]),
            domain("Flights", vec![intent("SearchOnewayFlight", &[
                ("flight_origin", &["Boston", "Seattle", "Atlanta", "Miami", "Detroit", "Phoenix"]),
                ("flight_destination", &["London", "Paris", "Tokyo", "Madrid", "Rome", "Lisbon"]),
                ("flight_date", &["June 1", "June 8", "June 15", "June 22", "June 27", "June 30"]),
            ])]),
            domain("Hotels", vec![intent("ReserveHotel", &[
                ("hotel_name", &["Hilton", "Marriott", "Hyatt", "Westin", "Ritz", "Sheraton"]),
                ("hotel_nights", &["1 night", "2 nights", "3 nights", "4 nights", "5 nights"]),
            ])]),
            domain("Movies", vec![
                intent("BuyMovieTickets", &[
                    ("movie_title", &["Dune", "Heat", "Up", "Jaws", "Alien", "Rocky"]),
                    ("movie_seats", &["1 ticket", "2 tickets", "3 tickets", "4 tickets"]),
                ]),
                intent("FindMovies", &[
                    ("movie_genre", &["comedy", "thriller", "drama", "horror", "western", "musical"]),
                ]),
            ]),
            domain("Restaurants", vec![
                intent("ReserveRestaurant", &[
                    ("restaurant_name", &["Nobu", "Zuma", "Balthazar", "Carbone", "Lilia", "Tartine"]),
                    ("reservation_time", &["7 pm", "8 pm", "6 pm", "9 pm", "5 pm"]),
                ]),
                intent("FindRestaurants", &[
                    ("cuisine", &["Thai", "Sushi", "Tapas", "Ramen", "Pho", "Falafel"]),
                    ("restaurant_city", &["Oakland", "Berkeley", "Tampa", "Orlando", "Buffalo", "Albany"]),
                ]),
            ]),
            domain("Weather", vec![intent("GetWeather", &[
                ("weather_city", &["Oslo", "Cairo", "Lima", "Quito", "Hanoi", "Dakar"]),
            ])]),
            domain("Music", vec![intent("PlaySong", &[
                ("song_name", &["Yesterday", "Imagine", "Hallelujah", "Creep", "Vogue", "Thriller"]),
            ])]),
        ];
        Self { domains: d }
    }

    /// The four held-out domains, two intents each. Besides the generic
    /// templates their Users sometimes use domain-specific phrasing.
    pub fn holdout() -> Self {
        let d = vec![
            domain("Home Search", vec![
                phrased(
                    intent("FindHomeByArea", &[
                        ("home_area", &["Dublin", "Galway", "Cork", "Sligo", "Tralee", "Ennis"]),
                        ("home_beds", &["1 bedroom", "2 bedrooms", "3 bedrooms", "4 bedrooms"]),
                    ]),
                    true,
                    &[("home_area", &["I want to live in <value> ."]), ("home_beds", &["It needs <value> ."])],
                    &[("home_area", &["Somewhere in <value> ."])],
                ),
                phrased(
                    intent("ScheduleVisit", &[
                        ("property_name", &["Oak Court", "Elm Plaza", "Birch Lofts", "Cedar House", "Maple Row", "Pine Villas"]),
                        ("visit_date", &["August 2", "August 9", "August 16", "August 23", "August 30", "August 5"]),
                    ]),
                    true,
                    &[("property_name", &["I would love to see <value> ."]), ("visit_date", &["I can come by on <value> ."])],
                    &[],
                ),
            ]),
            domain("Messaging", vec![
                phrased(
                    intent("ShareLocation", &[
                        ("location_contact", &["Greta", "Hiro", "Ines", "Jonas", "Kofi", "Lena"]),
                    ]),
                    true,
                    &[("location_contact", &["Send my location to <value> ."])],
                    &[],
                ),
                phrased(
                    intent("SendMessage", &[
                        ("message_contact", &["Mateo", "Nadia", "Omar", "Priya", "Quinn", "Rosa"]),
                        ("message_body", &["running late", "call me back", "see you soon", "on my way", "good luck", "happy birthday"]),
                    ]),
                    true,
                    &[("message_body", &["Tell them <value> ."])],
                    &[("message_contact", &["Text <value> ."])],
                ),
            ]),
            domain("Payment", vec![
                phrased(
                    intent("MakePayment", &[
                        ("payment_receiver", &["Sven", "Tomas", "Ursula", "Viktor", "Wanda", "Xavi"]),
                        ("payment_amount", &["25 euros", "60 euros", "85 euros", "110 euros", "140 euros", "200 euros"]),
                    ]),
                    true,
                    &[("payment_receiver", &["Pay <value> ."]), ("payment_amount", &["Send <value> ."])],
                    &[],
                ),
                phrased(
                    intent("RequestPayment", &[
                        ("request_from", &["Yara", "Zoe", "Abel", "Bianca", "Caleb", "Dora"]),
                        ("request_amount", &["15 pounds", "30 pounds", "45 pounds", "70 pounds", "95 pounds", "120 pounds"]),
                    ]),
                    true,
                    &[("request_from", &["Ask <value> for money ."])],
                    &[("request_amount", &["They owe me <value> ."])],
                ),
            ]),
            domain("Rental Cars", vec![
                phrased(
                    intent("ReserveCar", &[
                        ("car_pickup_city", &["Nantes", "Lyon", "Nice", "Lille", "Brest", "Dijon"]),
                        ("car_type", &["sedan", "compact", "SUV", "minivan", "convertible", "hatchback"]),
                        ("car_date", &["September 1", "September 7", "September 12", "September 18", "September 24", "September 29"]),
                    ]),
                    true,
                    &[("car_type", &["A <value> would be great ."]), ("car_pickup_city", &["Pick it up in <value> ."])],
                    &[],
                ),
                phrased(
                    intent("GetCarsAvailable", &[
                        ("rental_city", &["Porto", "Braga", "Faro", "Evora", "Coimbra", "Aveiro"]),
                        ("rental_start", &["October 3", "October 8", "October 11", "October 19", "October 25", "October 28"]),
                    ]),
                    true,
                    &[("rental_city", &["Any cars in <value> ?"])],
                    &[("rental_start", &["Starting <value> ."])],
                ),
            ]),
        ];
        Self { domains: d }
    }

    /// Ten unseen domains for active learning: eight with three intents each
    /// use the generic phrasing, Plumbing and Library use only their own.
    pub fn active_learning_pool() -> Self {
        let easy = |name: &str, a: IntentSpec, b: IntentSpec, c: IntentSpec| domain(name, vec![a, b, c]);
        let d = vec![
            easy(
                "Pet Care",
                intent("GroomPet", &[("pet_kind", &["poodle", "terrier", "beagle", "collie"]), ("groom_day", &["Nov 1", "Nov 2", "Nov 3", "Nov 4"])]),
                intent("BoardPet", &[("board_nights", &["2 sleeps", "3 sleeps", "4 sleeps", "5 sleeps"]), ("pet_name", &["Rex", "Luna", "Milo", "Coco"])]),
                intent("WalkDog", &[("walk_minutes", &["20 minutes", "30 minutes", "45 minutes", "60 minutes"])]),
            ),
            easy(
                "Tutoring",
                intent("BookTutor", &[("tutor_subject", &["algebra", "chemistry", "latin", "geometry"]), ("tutor_hour", &["3 oclock", "4 oclock", "5 oclock", "6 oclock"])]),
                intent("CancelTutor", &[("tutor_session", &["session A1", "session B2", "session C3", "session D4"])]),
                intent("FindTutor", &[("tutor_level", &["beginner", "intermediate", "advanced", "expert"])]),
            ),
            easy(
                "Car Repair",
                intent("BookRepair", &[("repair_issue", &["brakes", "tires", "battery", "clutch"]), ("repair_day", &["Nov 8", "Nov 9", "Nov 10", "Nov 11"])]),
                intent("GetQuote", &[("quote_part", &["muffler", "radiator", "alternator", "gearbox"])]),
                intent("TowCar", &[("tow_street", &["Elm Street", "High Street", "Mill Lane", "Church Road"])]),
            ),
            easy(
                "Gym",
                intent("BookClass", &[("class_kind", &["pilates", "spinning", "boxing", "zumba"]), ("class_day", &["Nov 15", "Nov 16", "Nov 17", "Nov 18"])]),
                intent("FreezeMembership", &[("freeze_weeks", &["1 week", "2 weeks", "3 weeks", "4 weeks"])]),
                intent("BookTrainer", &[("trainer_name", &["Coach Kim", "Coach Lee", "Coach Ray", "Coach Sam"])]),
            ),
            easy(
                "Florist",
                intent("OrderFlowers", &[("flower_kind", &["roses", "tulips", "lilies", "orchids"]), ("flower_to", &["Iris", "Jade", "Kira", "Lotte"])]),
                intent("TrackBouquet", &[("bouquet_code", &["FL100", "FL200", "FL300", "FL400"])]),
                intent("ReturnVase", &[("vase_color", &["amber", "teal", "crimson", "ivory"])]),
            ),
            easy(
                "Dentist",
                intent("BookCleaning", &[("dentist_name", &["Dr Ames", "Dr Blum", "Dr Cruz", "Dr Diaz"]), ("cleaning_day", &["Nov 22", "Nov 23", "Nov 24", "Nov 25"])]),
                intent("RefillPrescription", &[("prescription_id", &["RX11", "RX22", "RX33", "RX44"])]),
                intent("WhitenTeeth", &[("whitening_plan", &["basic plan", "plus plan", "premium plan", "deluxe plan"])]),
            ),
            easy(
                "Moving",
                intent("BookMovers", &[("move_from", &["Leeds", "York", "Bath", "Hull"]), ("move_to", &["Derby", "Ely", "Wells", "Truro"])]),
                intent("RentTruck", &[("truck_size", &["10 ft", "15 ft", "20 ft", "26 ft"])]),
                intent("StoreBoxes", &[("box_count", &["10 boxes", "20 boxes", "30 boxes", "40 boxes"])]),
            ),
            easy(
                "Photography",
                intent("BookShoot", &[("shoot_kind", &["portrait", "wedding", "headshot", "newborn"]), ("shoot_place", &["studio", "park", "beach", "rooftop"])]),
                intent("OrderPrints", &[("print_size", &["4x6", "5x7", "8x10", "11x14"])]),
                intent("EditPhotos", &[("photo_style", &["sepia", "monochrome", "vintage", "vivid"])]),
            ),
            domain("Plumbing", vec![
                phrased(
                    intent("FixLeak", &[("leak_room", &["kitchen", "bathroom", "basement", "garage"]), ("leak_day", &["Dec 1", "Dec 2", "Dec 3", "Dec 4"])]),
                    false,
                    &[
                        ("leak_room", &["Water is dripping in the <value> .", "There is a leak in my <value> ."]),
                        ("leak_day", &["A plumber could come <value> .", "Is <value> possible for the plumber ?"]),
                    ],
                    &[("leak_room", &["It is the <value> ."]), ("leak_day", &["Come on <value> ."])],
                ),
                phrased(
                    intent("UnclogDrain", &[("drain_spot", &["sink", "shower", "tub", "toilet"])]),
                    false,
                    &[("drain_spot", &["My <value> drain is clogged .", "The <value> will not drain ."])],
                    &[("drain_spot", &["The <value> one ."])],
                ),
            ]),
            domain("Library", vec![
                phrased(
                    intent("RenewBook", &[("book_title", &["Emma", "Ulysses", "Beloved", "Dracula"]), ("renew_weeks", &["one more week", "two more weeks", "three more weeks"])]),
                    false,
                    &[
                        ("book_title", &["My copy of <value> is due .", "I borrowed <value> from you ."]),
                        ("renew_weeks", &["Keep it for <value> .", "Extend the loan by <value> ."]),
                    ],
                    &[("book_title", &["The book is <value> ."]), ("renew_weeks", &["Give me <value> ."])],
                ),
                phrased(
                    intent("ReserveRoom", &[("study_room", &["room 101", "room 202", "room 303", "room 404"])]),
                    false,
                    &[("study_room", &["Hold <value> for my study group .", "We want to study in <value> ."])],
                    &[("study_room", &["Book <value> ."])],
                ),
            ]),
        ];
        Self { domains: d }
    }

    pub fn merged(worlds: &[&World]) -> Self {
        Self {
            domains: worlds.iter().flat_map(|w| w.domains.iter().cloned()).collect(),
        }
    }

    pub fn intents(&self) -> impl Iterator<Item = (&DomainSpec, &IntentSpec)> {
        self.domains.iter().flat_map(|d| d.intents.iter().map(move |i| (d, i)))
    }

    pub fn domain_names(&self) -> BTreeSet<String> {
        self.domains.iter().map(|d| d.name.clone()).collect()
    }

    pub fn schemas(&self) -> Vec<ApiSchema> {
        self.intents()
            .map(|(_, i)| {
                ApiSchema::new(i.intent.as_str(), i.slots.iter().map(|s| s.name.as_str()))
                    .expect("fixture names are valid")
            })
            .collect()
    }

    /// Intent -> domain name.
    pub fn domain_map(&self) -> BTreeMap<String, String> {
        self.intents().map(|(d, i)| (i.intent.clone(), d.name.clone())).collect()
    }

    pub fn phrasebook(&self) -> PhraseBook {
        PhraseBook::with_intents(
            self.intents()
                .filter_map(|(_, i)| i.phrasing.clone().map(|p| (i.intent.clone(), p)))
                .collect(),
        )
    }

    /// `per_intent` goals for every intent, avoiding duplicates when the
    /// vocabulary allows. Depends only on `seed`.
    pub fn goals(&self, per_intent: usize, seed: u64) -> Vec<ApiCall> {
        let mut out = Vec::new();
        for (_, spec) in self.intents() {
            let mut rng = seed::rng(&[seed, seed::str_hash(&spec.intent)]);
            let mut seen = BTreeSet::new();
            let mut made = 0;
            let mut attempts = 0;
            while made < per_intent {
                let slots: Vec<(String, String)> = spec
                    .slots
                    .iter()
                    .map(|s| (s.name.clone(), s.values.choose(&mut rng).cloned().unwrap_or_default()))
                    .collect();
                let goal = ApiCall::new(spec.intent.as_str(), slots).expect("fixture names are valid");
                attempts += 1;
                if seen.insert(serialize_call(&goal)) || attempts > 50 * per_intent {
                    out.push(goal);
                    made += 1;
                }
            }
        }
        out
    }

    /// Disjoint goal sets for several folds, drawn from one pool so that no
    /// goal appears in two folds when the vocabulary allows.
    pub fn fold_goals(&self, per_intent: &[usize], seed: u64) -> Vec<Vec<ApiCall>> {
        let total: usize = per_intent.iter().sum();
        let pool = self.goals(total, seed);
        let mut by_intent: BTreeMap<&str, Vec<&ApiCall>> = BTreeMap::new();
        for g in &pool {
            by_intent.entry(g.intent()).or_default().push(g);
        }
        let mut out = vec![Vec::new(); per_intent.len()];
        for (_, spec) in self.intents() {
            let goals = &by_intent[spec.intent.as_str()];
            let mut start = 0;
            for (f, n) in per_intent.iter().enumerate() {
                out[f].extend(goals[start..start + n].iter().map(|g| (*g).clone()));
                start += n;
            }
        }
        out
    }

    /// Lookup table covering `goals`.
    pub fn table(&self, goals: &[ApiCall], seed: u64) -> ApiTable {
        ApiTable::synthesize(&self.schemas(), goals, seed).expect("goals come from this world")
    }

    /// One human-style episode per goal, produced by the scripted pair with
    /// nucleus sampling over templates. The schema is not recorded.
    pub fn human_episodes(&self, goals: &[ApiCall], table: &ApiTable, fold: Fold, seed: u64) -> Vec<Episode> {
        let book = Arc::new(self.phrasebook());
        let user = ScriptedUser::new(book.clone());
        let assistant = ScriptedAssistant::new(book);
        let domains = self.domain_map();
        let mut sim = Simulator::new(&user, &assistant, table, &domains);
        sim.fold = fold;
        sim.origin = Origin::Human;
        let cfg = SimConfig {
            rollouts_per_goal: 1,
            schema_aware: true,
            decode: DecodeConfig::nucleus(0.9, seed),
            ..SimConfig::default()
        };
        sim.run_batch(goals, &cfg)
            .into_iter()
            .map(|r| {
                let mut ep = r.episode;
                ep.schema = None;
                ep
            })
            .collect()
    }
}

/// A ready-made corpus: human episodes for every fold of a world.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub episodes: Vec<Episode>,
    pub goals: BTreeMap<Fold, Vec<ApiCall>>,
    pub table: ApiTable,
}

impl Corpus {
    /// `per_intent` gives (train, valid, test) goal counts per intent.
    pub fn build(world: &World, per_intent: (usize, usize, usize), seed: u64) -> Self {
        let folds = [Fold::Train, Fold::Valid, Fold::Test];
        let sets = world.fold_goals(&[per_intent.0, per_intent.1, per_intent.2], seed);
        let all: Vec<ApiCall> = sets.iter().flatten().cloned().collect();
        let table = world.table(&all, seed);
        let mut episodes = Vec::new();
        let mut goals = BTreeMap::new();
        for (fold, set) in folds.into_iter().zip(sets) {
            episodes.extend(world.human_episodes(&set, &table, fold, seed::mix(&[seed, fold as u64])));
            goals.insert(fold, set);
        }
        Self { episodes, goals, table }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_and_values_are_globally_unique() {
        let world = World::merged(&[&World::in_domain(), &World::holdout(), &World::active_learning_pool()]);
        let mut slots = BTreeSet::new();
        let mut values = BTreeSet::new();
        let mut intents = BTreeSet::new();
        for (_, spec) in world.intents() {
            assert!(intents.insert(spec.intent.clone()), "{}", spec.intent);
            for s in &spec.slots {
                assert!(slots.insert(s.name.clone()), "{}", s.name);
                for v in &s.values {
                    assert!(values.insert(v.clone()), "{v}");
                    assert!(!v.contains(" and "));
                }
            }
        }
        assert_eq!(World::holdout().domain_names(), crate::data_io::default_holdout());
    }

    #[test]
    fn human_episodes_succeed() {
        let world = World::holdout();
        let goals = world.goals(2, 1);
        let table = world.table(&goals, 1);
        let eps = world.human_episodes(&goals, &table, Fold::Train, 5);
        assert_eq!(eps.len(), goals.len());
        for ep in &eps {
            ep.validate().unwrap();
            assert!(ep.success, "{ep:?}");
            assert_eq!(ep.n_calls(), 1);
        }
    }
}
