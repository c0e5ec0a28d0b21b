use proptest::prelude::*;

use roleplay_core::scenario::{self, BorrowBuySetup, BorrowDonateSetup, ScenarioConfig, ScenarioError, PRESETS};
use roleplay_core::strategies::StrategyKind;

/// Preset fingerprints frozen at the time the presets were written. A change
/// here means reports produced by earlier builds no longer reproduce.
const GOLDEN: [(&str, &str); 4] = [
    (
        "bb_desk",
        "69a7b0652d29d9e0926b054bf987815fe8973472211b3fdeb35e1390bddecafe",
    ),
    (
        "bd_desk",
        "9a650c301d94579edb48b43e476aae0e660004b3ad00725060b0ac6e6bdb272c",
    ),
    (
        "agora_like",
        "6777538d03825379e75329f472f4e6c7ca066bcec3cad8ddcd48bacc835efa9a",
    ),
    (
        "lodestar_like",
        "6566b476878ead266eecfb165daef39ad7d1b2efe5d9acfe2943eedb5e2f1744",
    ),
];

#[test]
fn preset_fingerprints_are_frozen() {
    assert_eq!(PRESETS.len(), GOLDEN.len());
    for (name, hash) in GOLDEN {
        assert_eq!(ScenarioConfig::preset(name).unwrap().fingerprint(), hash, "{name}");
    }
}

#[test]
fn presets_survive_a_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    for (name, _) in PRESETS {
        let config = ScenarioConfig::preset(name).unwrap();
        let path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&path, config.to_toml()).unwrap();
        let back = ScenarioConfig::resolve(path.to_str().unwrap()).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.fingerprint(), config.fingerprint());
        assert_eq!(back.build_world().unwrap(), config.build_world().unwrap());
    }
}

#[test]
fn presets_declare_what_they_support() {
    let supports = |name: &str, kind| ScenarioConfig::preset(name).unwrap().supports(kind).is_ok();
    for name in ["bb_desk", "agora_like"] {
        assert!(supports(name, StrategyKind::BorrowBuy) && supports(name, StrategyKind::BorrowBuyMulti));
        assert!(!supports(name, StrategyKind::BorrowDonate));
    }
    for name in ["bd_desk", "lodestar_like"] {
        assert!(supports(name, StrategyKind::BorrowDonate) && supports(name, StrategyKind::BorrowDonateEnhanced));
        assert!(!supports(name, StrategyKind::BorrowBuy));
    }
}

#[test]
fn malformed_files_report_where_and_what() {
    let text = "name = \"x\"\n[pool]\nstable = \"USD\"\nl0 = oops\n";
    match ScenarioConfig::parse(text) {
        Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
    let extra = "surprise = 1\n".to_owned() + &ScenarioConfig::preset("bb_desk").unwrap().to_toml();
    assert!(matches!(
        ScenarioConfig::parse(&extra),
        Err(ScenarioError::Parse { .. })
    ));
    let negative = ScenarioConfig::preset("bd_desk")
        .unwrap()
        .to_toml()
        .replace("liq_incentive = 0.1", "liq_incentive = -0.1");
    let err = ScenarioConfig::parse(&negative)
        .and_then(|c| c.validate().map(|_| c))
        .unwrap_err();
    assert!(err.to_string().contains("liq_incentive"), "{err}");
    assert!(matches!(
        ScenarioConfig::resolve("/definitely/not/here.toml"),
        Err(ScenarioError::Io { .. } | ScenarioError::Unknown(..))
    ));
}

#[test]
fn incident_totals() {
    let list = scenario::incidents();
    assert_eq!(list.len(), 14);
    let sum: f64 = list.iter().map(|i| i.loss_usd).sum();
    assert_eq!(sum, 435_095_800.0);
    assert_eq!(scenario::total_losses_usd(), sum);
    assert!(list.iter().all(|i| i.roles.len() >= 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_scenarios_round_trip(
        init_s in 1.0f64..1e9,
        init_m in 0.0f64..1e6,
        cr in 0.05f64..=1.0,
        l0 in 1.0f64..1e8,
        fee in 0.0f64..0.01,
    ) {
        let bb = BorrowBuySetup { init_s, init_m, cr_m: cr, cr_s: cr, l0, flash_fee: fee }.config();
        let back = ScenarioConfig::parse(&bb.to_toml()).unwrap();
        prop_assert_eq!(&back, &bb);
        prop_assert!(back.build_world().is_ok());

        let bd = BorrowDonateSetup {
            supply_ib: l0,
            borrowable_ib: l0 * cr * 0.5,
            borrowable_s: init_s,
            cr_s: cr,
            cr_ib: cr,
            liq_incentive: fee,
            flash_fee: fee,
            flash_liquidity: 1e12,
        }
        .config();
        let back = ScenarioConfig::parse(&bd.to_toml()).unwrap();
        prop_assert_eq!(back.fingerprint(), bd.fingerprint());
    }
}
