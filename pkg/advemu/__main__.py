from advemu.cli import main

raise SystemExit(main())
