from homwb.main import main

raise SystemExit(main())
