//! Re-derives the bundled AlexNet and ResNet18 layer profiles from the
//! network shapes and checks them against the data files and the widely
//! published parameter/MAC totals.

use coinfer::profiles::DnnProfile;

const F32: u64 = 4;

struct Expected {
    macs: u64,
    params: u64,
    out_c: u64,
    out_hw: u64,
}

fn conv_macs(cin: u64, cout: u64, k: u64, out_hw: u64) -> u64 {
    cout * out_hw * out_hw * cin * k * k
}

fn check(profile: &DnnProfile, expected: &[Expected]) {
    assert_eq!(profile.layer_count(), expected.len());
    let input = &profile.layers()[0];
    assert_eq!(
        (input.macs, input.param_bytes, input.out_feature_bytes),
        (0, 0, 3 * 224 * 224)
    );
    for (i, (l, e)) in profile.layers()[1..].iter().zip(expected).enumerate() {
        assert_eq!(l.macs, e.macs, "layer {} macs", i + 1);
        assert_eq!(l.param_bytes, e.params * F32, "layer {} params", i + 1);
        assert_eq!(
            l.out_feature_bytes,
            e.out_c * e.out_hw * e.out_hw * F32,
            "layer {} features",
            i + 1
        );
    }
}

#[test]
fn alexnet_matches_shapes() {
    let fc = |fin: u64, fout: u64| Expected {
        macs: fin * fout,
        params: fin * fout + fout,
        out_c: fout,
        out_hw: 1,
    };
    let conv = |cin: u64, cout: u64, k: u64, conv_hw: u64, out_hw: u64| Expected {
        macs: conv_macs(cin, cout, k, conv_hw),
        params: cout * cin * k * k + cout,
        out_c: cout,
        out_hw,
    };
    let expected = [
        conv(3, 64, 11, 55, 27),
        conv(64, 192, 5, 27, 13),
        conv(192, 384, 3, 13, 13),
        conv(384, 256, 3, 13, 13),
        conv(256, 256, 3, 13, 6),
        fc(256 * 36, 4096),
        fc(4096, 4096),
        fc(4096, 1000),
    ];
    let p = DnnProfile::bundled("alexnet").unwrap();
    check(&p, &expected);
    assert_eq!(p.total_param_bytes() / F32, 61_100_840);
    assert_eq!(p.total_macs(), 714_188_480);
}

#[test]
fn resnet18_matches_shapes() {
    let bn = |c: u64| 4 * c;
    let block = |cin: u64, cout: u64, out_hw: u64, down: bool| {
        let mut macs = conv_macs(cin, cout, 3, out_hw) + conv_macs(cout, cout, 3, out_hw);
        let mut params = cout * cin * 9 + cout * cout * 9 + 2 * bn(cout);
        if down {
            macs += conv_macs(cin, cout, 1, out_hw);
            params += cout * cin + bn(cout);
        }
        Expected {
            macs,
            params,
            out_c: cout,
            out_hw,
        }
    };
    let expected = [
        Expected {
            macs: conv_macs(3, 64, 7, 112),
            params: 64 * 3 * 49 + bn(64),
            out_c: 64,
            out_hw: 56,
        },
        block(64, 64, 56, false),
        block(64, 64, 56, false),
        block(64, 128, 28, true),
        block(128, 128, 28, false),
        block(128, 256, 14, true),
        block(256, 256, 14, false),
        block(256, 512, 7, true),
        block(512, 512, 7, false),
        Expected {
            macs: 512 * 1000,
            params: 512 * 1000 + 1000,
            out_c: 1000,
            out_hw: 1,
        },
    ];
    let p = DnnProfile::bundled("resnet18").unwrap();
    check(&p, &expected);
    // Published count excludes the two running-statistics vectors per BN.
    let bn_channels: u64 = 64 + 4 * 64 + (4 * 128 + 128) + (4 * 256 + 256) + (4 * 512 + 512);
    assert_eq!(p.total_param_bytes() / F32 - 2 * bn_channels, 11_689_512);
    assert_eq!(p.total_macs(), 1_814_073_344);
}
