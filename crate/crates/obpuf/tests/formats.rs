use obpuf::formats::{read_json, read_transcripts, write_json, write_transcripts, DeviceRecord};
use obpuf_core::apuf::ApufInstance;
use obpuf_core::bits::BitString;
use obpuf_core::obfuscation::{design_pattern_set, ObPufDevice, ObPufParams, PatternSet};
use obpuf_core::protocol::{enroll, run_session, AuthParams, EnrollOptions, LocalLink, Prover, ServerModel};
use obpuf_core::rng::seeded;

fn params() -> ObPufParams {
    ObPufParams { k: 32, m: 3, p: 4, n_ins: 4, xors: 2 }
}

#[test]
fn apuf_instances_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded(1);
    let a: Vec<ApufInstance> = (0..20).map(|_| ApufInstance::sample(64, 0.0371, &mut rng).unwrap()).collect();
    let path = dir.path().join("apufs.json");
    write_json(&path, &a).unwrap();
    let b: Vec<ApufInstance> = read_json(&path).unwrap();
    assert_eq!(a, b);
    for (x, y) in a.iter().zip(&b) {
        for (u, v) in x.omega().as_slice().iter().zip(y.omega().as_slice()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
}

#[test]
fn malformed_instance_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"k": 3, "stage_delays": [[0,0,0,0]], "noise_sigma": 0.0}"#).unwrap();
    assert!(read_json::<ApufInstance>(&path).is_err());
}

#[test]
fn pattern_set_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let set = design_pattern_set(&params(), 2, 10).unwrap();
    let path = dir.path().join("patterns.json");
    write_json(&path, &set).unwrap();
    let back: PatternSet = read_json(&path).unwrap();
    assert_eq!(set, back);
}

#[test]
fn device_record_rebuilds_the_same_device() {
    let dir = tempfile::tempdir().unwrap();
    let set = design_pattern_set(&params(), 3, 10).unwrap();
    let dev = ObPufDevice::sample(&params(), set, 0.05, &mut seeded(4)).unwrap();
    let path = dir.path().join("device.json");
    write_json(&path, &DeviceRecord::from_device(&dev)).unwrap();
    let mut back = read_json::<DeviceRecord>(&path).unwrap().into_device().unwrap();
    let mut orig = dev.clone();
    orig.open_fixed_session();
    back.open_fixed_session();
    let mut rng = seeded(5);
    for _ in 0..200 {
        let c = BitString::random(29, &mut rng);
        assert_eq!(orig.candidate_responses(&c).unwrap(), back.candidate_responses(&c).unwrap());
    }

    let mut rec = DeviceRecord::from_device(&dev);
    rec.params.xors = 5;
    assert!(rec.into_device().is_err());
}

#[test]
fn transcripts_and_enrollment_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let set = design_pattern_set(&params(), 6, 10).unwrap();
    let dev = ObPufDevice::sample(&params(), set, 0.0, &mut seeded(7)).unwrap();
    let mut server_rng = seeded(8);
    let mut model = enroll(&dev, 3, &EnrollOptions::ideal(0.0), &mut server_rng).unwrap();
    let path = dir.path().join("enrollment.json");
    write_json(&path, &model).unwrap();
    assert_eq!(read_json::<ServerModel>(&path).unwrap(), model);

    let mut link = LocalLink::new(Prover::new(dev, seeded(9), false));
    let auth = AuthParams { n: 12, n_th: 0, n_mismatch: 0 };
    let ts: Vec<_> = (0..4).map(|s| run_session(&mut model, &mut link, &auth, s, &mut server_rng).unwrap()).collect();
    let path = dir.path().join("sessions.jsonl");
    write_transcripts(&path, &ts).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 4);
    assert_eq!(read_transcripts(&path).unwrap(), ts);
}
